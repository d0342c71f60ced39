//! Dataset sources checked against independent fixtures and a closed-form probe.

use std::fs;
use std::path::Path;

use normfree::data::{load_idx, synthetic_dataset, Dataset, SyntheticSpec};
use normfree::experiment::{parse_config_str, run, RunStatus};

/// Solve `a x = b` for a symmetric positive definite `a` (Cholesky).
fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j {
                (a[i][i] - s).sqrt()
            } else {
                (a[i][j] - s) / l[j][j]
            };
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// Train accuracy of a ridge least-squares probe on targets ±1.
fn probe_accuracy(ds: &Dataset) -> f64 {
    let n = ds.len();
    let dim = ds.images.data().len() / n;
    let rows: Vec<Vec<f64>> = ds
        .images
        .data()
        .chunks(dim)
        .map(|r| r.iter().map(|&v| f64::from(v)).chain([1.0]).collect())
        .collect();
    let y: Vec<f64> = ds.labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let d = dim + 1;
    let mut gram = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    for (r, &t) in rows.iter().zip(&y) {
        for i in 0..d {
            rhs[i] += r[i] * t;
            for j in 0..d {
                gram[i][j] += r[i] * r[j];
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += 1e-6;
    }
    let w = solve_spd(&gram, &rhs);
    let correct = rows
        .iter()
        .zip(&y)
        .filter(|(r, &t)| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() * t > 0.0)
        .count();
    correct as f64 / n as f64
}

#[test]
fn two_class_synthetic_data_is_linearly_separable() {
    for seed in 0..3 {
        let ds = synthetic_dataset(&SyntheticSpec {
            classes: 2,
            samples: 400,
            channels: 1,
            height: 8,
            width: 8,
            noise: 1.0,
            seed,
        })
        .unwrap();
        let acc = probe_accuracy(&ds);
        assert!(acc >= 0.95, "seed {seed}: probe accuracy {acc}");
    }
}

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend(d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn write_idx(dir: &Path, n: usize, side: usize, classes: usize) -> (Vec<u8>, Vec<u8>) {
    let pixels: Vec<u8> = (0..n * side * side)
        .map(|i| {
            let (img, px) = (i / (side * side), i % (side * side));
            let class = img % classes;
            let on = (px % side) * classes / side == class;
            if on {
                200 + (img % 50) as u8
            } else {
                (img * 7 + px) as u8 % 40
            }
        })
        .collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % classes) as u8).collect();
    let dims = [n as u32, side as u32, side as u32];
    fs::write(dir.join("images.idx"), idx_bytes(0x0803, &dims, &pixels)).unwrap();
    fs::write(dir.join("labels.idx"), idx_bytes(0x0801, &[n as u32], &labels)).unwrap();
    (pixels, labels)
}

#[test]
fn idx_fixture_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let (pixels, labels) = write_idx(tmp.path(), 4, 6, 2);
    let ds = load_idx(&tmp.path().join("images.idx"), &tmp.path().join("labels.idx")).unwrap();
    assert_eq!(ds.images.shape(), &[4, 1, 6, 6]);
    let expected: Vec<f32> = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    assert_eq!(ds.images.data(), &expected[..]);
    assert_eq!(ds.labels, labels.iter().map(|&l| l as usize).collect::<Vec<_>>());
}

#[test]
fn idx_source_trains_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    write_idx(tmp.path(), 300, 8, 3);
    let text = format!(
        r#"
regime = "batch_norm"
epochs = 2
batch_size = 32
data.source = "idx"
data.images = "{0}/images.idx"
data.labels = "{0}/labels.idx"
network.widths = [4, 8]
network.blocks = [1, 1]
schedule.kind = "monotonic_decrease"
schedule.base_lr = 0.05
output.dir = "{0}/out"
"#,
        tmp.path().display()
    );
    let config = parse_config_str(&text).unwrap();
    let record = run(&config).unwrap();
    assert_eq!(record.status, RunStatus::Completed);
    assert_eq!(record.epochs.len(), 2);
    assert!(record.epochs[1].val_accuracy > 50.0, "{:?}", record.epochs[1]);
}
