//! Files exchanged with h5py/numpy. Skipped when python3 with h5py is not
//! installed.

use std::path::Path;
use std::process::Command;

use cgsense::config::DatasetNames;
use cgsense::container::{read_dataset, write_dataset};
use cgsense::data::KSpaceDataset;
use cgsense::C64;
use ndarray::Array3;

fn python(script: &str, file: &Path) -> Option<String> {
    let out = Command::new("python3").arg("-c").arg(script).arg(file).output().ok()?;
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        if err.contains("No module named") {
            return None;
        }
        panic!("python failed: {err}");
    }
    Some(String::from_utf8_lossy(&out.stdout).into_owned())
}

const WRITE_BART: &str = r#"
import sys, h5py, numpy as np
read, spokes, coils = 6, 4, 3
r = np.arange(read)[None, :, None, None]
s = np.arange(spokes)[None, None, :, None]
c = np.arange(coils)[None, None, None, :]
raw = (r + 10 * s + 100 * c + 1j * (c - s)).astype(np.complex64)
traj = np.zeros((3, read, spokes), np.float32)
traj[0] = np.arange(read)[:, None] - 3
traj[1] = np.arange(spokes)[None, :] * 0.5
with h5py.File(sys.argv[1], "w") as f:
    f["rawdata"] = raw
    f["trajectory"] = traj
"#;

#[test]
fn reads_single_precision_bart_layout() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bart.h5");
    if python(WRITE_BART, &file).is_none() {
        eprintln!("skipping: python3 with h5py not available");
        return;
    }
    let ds = read_dataset(&file, &DatasetNames::default()).unwrap();
    assert_eq!(ds.samples.dim(), (3, 4, 6));
    assert_eq!(ds.trajectory.dim(), (3, 4, 6));
    for ((c, s, r), v) in ds.samples.indexed_iter() {
        let expected = C64::new((r + 10 * s + 100 * c) as f64, c as f64 - s as f64);
        assert_eq!(*v, expected);
    }
    assert_eq!(ds.trajectory[[0, 2, 5]], 2.0);
    assert_eq!(ds.trajectory[[1, 3, 0]], 1.5);
    assert!(ds.sensitivities.is_none());
}

const READ_BACK: &str = r#"
import sys, h5py, numpy as np
with h5py.File(sys.argv[1], "r") as f:
    raw = f["rawdata"][()]
    traj = f["trajectory"][()]
    print(raw.shape, traj.shape, raw.dtype.kind)
    print(raw[0, 5, 1, 2].real, raw[0, 5, 1, 2].imag, traj[1, 5, 1])
"#;

#[test]
fn written_files_open_in_h5py() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("ours.h5");
    let samples = Array3::from_shape_fn((3, 2, 6), |(c, s, r)| C64::new((r + 10 * s) as f64, c as f64));
    let mut traj = Array3::zeros((3, 2, 6));
    traj[[1, 1, 5]] = 0.25;
    write_dataset(&file, &KSpaceDataset::new(samples, traj), &DatasetNames::default()).unwrap();
    let Some(out) = python(READ_BACK, &file) else {
        eprintln!("skipping: python3 with h5py not available");
        return;
    };
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "(1, 6, 2, 3) (3, 6, 2) c");
    assert_eq!(lines[1], "15.0 2.0 0.25");
}
