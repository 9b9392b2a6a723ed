//! HDF5 container I/O.
//!
//! On disk, k-space data follow the BART dimension order used by the public
//! challenge files: `rawdata` is `[1, read, spoke, coil]` and `trajectory` is
//! `[3, read, spoke]`. Files written by column-major tools sometimes show up
//! with the axes reversed (`[coil, spoke, read, 1]`, `[spoke, read, 3]`);
//! both layouts are accepted on read. Complex values are the `{r, i}`
//! compound that h5py also uses. Optional `sensitivities` are stored
//! `[coil, row, col]` and `noise_covariance` `[coil, coil]`.
//!
//! Modification times are not recorded, so identical inputs give
//! byte-identical files.

use std::path::{Path, PathBuf};

use hdf5::types::TypeDescriptor;
use hdf5::{Dataset, File, H5Type};
use ndarray::{Array2, Array3, ArrayD, Axis, Ix2, Ix3};

use crate::config::DatasetNames;
use crate::data::{Image, KSpaceDataset};
use crate::{Error, Result, C64};

pub const IMAGE_ENTRY: &str = "image";
pub const PHANTOM_ENTRY: &str = "phantom";
pub const MASK_ENTRY: &str = "mask";
const WHITENED_ATTR: &str = "whitened";

fn container_err(path: &Path) -> impl Fn(hdf5::Error) -> Error + '_ {
    move |e| Error::Container {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<File> {
    File::with_options()
        .with_fcpl(|p| p.obj_track_times(false))
        .create(path)
        .map_err(container_err(path))
}

fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::Container {
            path: path.to_path_buf(),
            message: "no such file".into(),
        });
    }
    File::open(path).map_err(container_err(path))
}

fn write_array<T: H5Type + Clone, D: ndarray::Dimension>(
    file: &File,
    path: &Path,
    name: &str,
    data: &ndarray::Array<T, D>,
) -> Result<()> {
    let data = data.as_standard_layout();
    file.new_dataset_builder()
        .obj_track_times(false)
        .with_data(&data)
        .create(name)
        .map_err(container_err(path))?;
    Ok(())
}

fn entry(file: &File, path: &Path, name: &str) -> Result<Dataset> {
    if !file.link_exists(name) {
        return Err(Error::MissingEntry {
            path: path.to_path_buf(),
            name: name.to_string(),
        });
    }
    file.dataset(name).map_err(container_err(path))
}

fn descriptor(ds: &Dataset, path: &Path) -> Result<TypeDescriptor> {
    ds.dtype()
        .and_then(|t| t.to_descriptor())
        .map_err(container_err(path))
}

fn is_complex(td: &TypeDescriptor) -> bool {
    match td {
        TypeDescriptor::Compound(c) => {
            c.fields.len() == 2 && c.fields.iter().all(|f| matches!(f.ty, TypeDescriptor::Float(_)))
        }
        _ => false,
    }
}

fn is_real(td: &TypeDescriptor) -> bool {
    matches!(
        td,
        TypeDescriptor::Float(_) | TypeDescriptor::Integer(_) | TypeDescriptor::Unsigned(_)
    )
}

fn read_complex(file: &File, path: &Path, name: &str) -> Result<ArrayD<C64>> {
    let ds = entry(file, path, name)?;
    let td = descriptor(&ds, path)?;
    if !is_complex(&td) {
        return Err(Error::DataType {
            path: path.to_path_buf(),
            name: name.to_string(),
            found: td.to_string(),
        });
    }
    ds.read_dyn::<C64>().map_err(|e| Error::DataType {
        path: path.to_path_buf(),
        name: name.to_string(),
        found: format!("{td} ({e})"),
    })
}

/// Real data, or the real part of complex data.
fn read_real(file: &File, path: &Path, name: &str) -> Result<ArrayD<f64>> {
    let ds = entry(file, path, name)?;
    let td = descriptor(&ds, path)?;
    if is_complex(&td) {
        return Ok(read_complex(file, path, name)?.mapv(|v| v.re));
    }
    if !is_real(&td) {
        return Err(Error::DataType {
            path: path.to_path_buf(),
            name: name.to_string(),
            found: td.to_string(),
        });
    }
    ds.read_dyn::<f64>().map_err(container_err(path))
}

fn shape_err(path: &Path, name: &str, what: &str, shape: &[usize]) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        message: format!("entry `{name}` has shape {shape:?}, expected {what}"),
    }
}

fn into_dim<T, D: ndarray::Dimension>(
    a: ArrayD<T>,
    path: &Path,
    name: &str,
    what: &str,
) -> Result<ndarray::Array<T, D>> {
    let shape = a.shape().to_vec();
    a.into_dimensionality::<D>()
        .map_err(|_| shape_err(path, name, what, &shape))
}

/// `[1, read, spoke, coil]` (or reversed) to `[coil, spoke, read]`.
fn samples_from_disk(raw: ArrayD<C64>, path: &Path, name: &str) -> Result<Array3<C64>> {
    let what = "[1, read, spoke, coil]";
    let shape = raw.shape().to_vec();
    let raw = into_dim::<_, ndarray::Ix4>(raw, path, name, what)?;
    let canonical = if shape[0] == 1 {
        raw.index_axis_move(Axis(0), 0).reversed_axes()
    } else if shape[3] == 1 {
        raw.index_axis_move(Axis(3), 0)
    } else {
        return Err(shape_err(path, name, what, &shape));
    };
    Ok(canonical.as_standard_layout().into_owned())
}

/// `[3, read, spoke]` (or reversed) to `[axis, spoke, read]`.
fn trajectory_from_disk(raw: ArrayD<f64>, path: &Path, name: &str) -> Result<Array3<f64>> {
    let what = "[3, read, spoke]";
    let shape = raw.shape().to_vec();
    let raw = into_dim::<_, Ix3>(raw, path, name, what)?;
    let canonical = if (2..=3).contains(&shape[0]) {
        raw.permuted_axes([0, 2, 1])
    } else if (2..=3).contains(&shape[2]) {
        raw.reversed_axes()
    } else {
        return Err(shape_err(path, name, what, &shape));
    };
    Ok(canonical.as_standard_layout().into_owned())
}

/// Reads a k-space dataset, mapping entry names through `names`.
pub fn read_dataset(path: &Path, names: &DatasetNames) -> Result<KSpaceDataset> {
    let file = open(path)?;
    let samples = samples_from_disk(read_complex(&file, path, &names.rawdata)?, path, &names.rawdata)?;
    let trajectory = trajectory_from_disk(
        read_real(&file, path, &names.trajectory)?,
        path,
        &names.trajectory,
    )?;
    let mut dataset = KSpaceDataset::new(samples, trajectory);
    if file.link_exists(&names.sensitivities) {
        let maps = read_complex(&file, path, &names.sensitivities)?;
        dataset.sensitivities = Some(into_dim::<_, Ix3>(
            maps,
            path,
            &names.sensitivities,
            "[coil, row, col]",
        )?);
    }
    if file.link_exists(&names.noise_covariance) {
        let cov = read_complex(&file, path, &names.noise_covariance)?;
        dataset.noise_covariance = Some(into_dim::<_, Ix2>(
            cov,
            path,
            &names.noise_covariance,
            "[coil, coil]",
        )?);
    }
    if file.attr(WHITENED_ATTR).is_ok() {
        dataset.whitened = file
            .attr(WHITENED_ATTR)
            .and_then(|a| a.read_scalar::<u8>())
            .map_err(container_err(path))?
            != 0;
    }
    Ok(dataset)
}

/// Writes a dataset in BART order. Refuses datasets that fail validation.
pub fn write_dataset(path: &Path, dataset: &KSpaceDataset, names: &DatasetNames) -> Result<()> {
    dataset.ensure_valid()?;
    let file = create(path)?;
    let samples = dataset
        .samples
        .view()
        .reversed_axes()
        .insert_axis(Axis(0))
        .to_owned();
    write_array(&file, path, &names.rawdata, &samples)?;
    let trajectory = dataset.trajectory.view().permuted_axes([0, 2, 1]).to_owned();
    write_array(&file, path, &names.trajectory, &trajectory)?;
    if let Some(maps) = &dataset.sensitivities {
        write_array(&file, path, &names.sensitivities, maps)?;
    }
    if let Some(cov) = &dataset.noise_covariance {
        write_array(&file, path, &names.noise_covariance, cov)?;
    }
    if dataset.whitened {
        file.new_attr::<u8>()
            .create(WHITENED_ATTR)
            .and_then(|a| a.write_scalar(&1u8))
            .map_err(container_err(path))?;
    }
    Ok(())
}

/// Full-precision complex image under the `image` entry.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let file = create(path)?;
    write_array(&file, path, IMAGE_ENTRY, image.pixels())
}

/// Reads the `image` entry; real-valued images are promoted to complex.
pub fn read_image(path: &Path) -> Result<Image> {
    let file = open(path)?;
    let ds = entry(&file, path, IMAGE_ENTRY)?;
    let td = descriptor(&ds, path)?;
    let pixels = if is_complex(&td) {
        read_complex(&file, path, IMAGE_ENTRY)?
    } else {
        read_real(&file, path, IMAGE_ENTRY)?.mapv(|v| C64::new(v, 0.0))
    };
    Ok(Image::new(into_dim::<_, Ix2>(pixels, path, IMAGE_ENTRY, "[row, col]")?))
}

/// Simulation ground truth: the phantom (also readable as an image), the
/// true coil maps and the phantom support mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub phantom: Array2<f64>,
    pub sensitivities: Array3<C64>,
    pub mask: Array2<bool>,
}

pub fn write_ground_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let file = create(path)?;
    write_array(&file, path, PHANTOM_ENTRY, &truth.phantom)?;
    write_array(&file, path, IMAGE_ENTRY, &truth.phantom)?;
    write_array(&file, path, "sensitivities", &truth.sensitivities)?;
    write_array(&file, path, MASK_ENTRY, &truth.mask.mapv(u8::from))
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let file = open(path)?;
    let phantom = into_dim::<_, Ix2>(read_real(&file, path, PHANTOM_ENTRY)?, path, PHANTOM_ENTRY, "[row, col]")?;
    let sensitivities = into_dim::<_, Ix3>(
        read_complex(&file, path, "sensitivities")?,
        path,
        "sensitivities",
        "[coil, row, col]",
    )?;
    Ok(GroundTruth {
        phantom,
        sensitivities,
        mask: read_mask(path)?,
    })
}

/// Reads a `mask` entry; any nonzero value counts as inside.
pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    let file = open(path)?;
    let ds = entry(&file, path, MASK_ENTRY)?;
    let td = descriptor(&ds, path)?;
    let values = match td {
        TypeDescriptor::Boolean => ds.read_dyn::<bool>().map_err(container_err(path))?,
        _ => read_real(&file, path, MASK_ENTRY)?.mapv(|v| v != 0.0),
    };
    into_dim::<_, Ix2>(values, path, MASK_ENTRY, "[row, col]")
}

pub const DCF_ENTRY: &str = "dcf";

/// Density compensation weights `[spoke, read]` under the `dcf` entry.
pub fn write_weights(path: &Path, weights: &Array2<f64>) -> Result<()> {
    let file = create(path)?;
    write_array(&file, path, DCF_ENTRY, weights)
}

pub fn read_weights(path: &Path) -> Result<Array2<f64>> {
    let file = open(path)?;
    into_dim::<_, Ix2>(read_real(&file, path, DCF_ENTRY)?, path, DCF_ENTRY, "[spoke, read]")
}

/// `path` with its extension replaced; used to derive sidecar names.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn dataset() -> KSpaceDataset {
        let samples = Array::from_shape_fn((3, 4, 6), |(c, s, r)| {
            C64::new(c as f64 + 0.25 * s as f64, r as f64 - 1.0 / 3.0)
        });
        let trajectory = Array::from_shape_fn((3, 4, 6), |(a, s, r)| {
            if a == 2 {
                0.0
            } else {
                (r as f64 - 3.0) * (s as f64 + 1.0).cos().powi(a as i32 + 1)
            }
        });
        KSpaceDataset::new(samples, trajectory)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.h5");
        let names = DatasetNames::default();
        let d = dataset();
        write_dataset(&path, &d, &names).unwrap();
        assert_eq!(read_dataset(&path, &names).unwrap(), d);
    }

    #[test]
    fn round_trip_with_optional_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.h5");
        let names = DatasetNames {
            rawdata: "kdata".into(),
            ..DatasetNames::default()
        };
        let mut d = dataset()
            .with_sensitivities(Array3::from_elem((3, 5, 5), C64::new(0.5, -0.5)))
            .with_noise_covariance(Array2::from_diag_elem(3, C64::new(2.0, 0.0)));
        d.whitened = true;
        write_dataset(&path, &d, &names).unwrap();
        let file = File::open(&path).unwrap();
        assert!(file.link_exists("sensitivities"));
        assert!(file.link_exists("kdata"));
        assert_eq!(file.dataset("kdata").unwrap().shape(), vec![1, 6, 4, 3]);
        assert_eq!(file.dataset("trajectory").unwrap().shape(), vec![3, 6, 4]);
        assert_eq!(read_dataset(&path, &names).unwrap(), d);
    }

    #[test]
    fn identical_writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.h5");
        let b = dir.path().join("b.h5");
        write_dataset(&a, &dataset(), &DatasetNames::default()).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(1100));
        write_dataset(&b, &dataset(), &DatasetNames::default()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn missing_entry_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.h5");
        write_dataset(&path, &dataset(), &DatasetNames::default()).unwrap();
        let names = DatasetNames {
            trajectory: "traj".into(),
            ..DatasetNames::default()
        };
        match read_dataset(&path, &names) {
            Err(Error::MissingEntry { name, .. }) => assert_eq!(name, "traj"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn real_rawdata_is_a_type_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.h5");
        let file = create(&path).unwrap();
        write_array(&file, &path, "rawdata", &Array::<f64, _>::zeros((1, 6, 4, 3))).unwrap();
        write_array(&file, &path, "trajectory", &Array::<f64, _>::zeros((3, 6, 4))).unwrap();
        drop(file);
        assert!(matches!(
            read_dataset(&path, &DatasetNames::default()),
            Err(Error::DataType { .. })
        ));
    }

    #[test]
    fn reversed_layout_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.h5");
        let d = dataset();
        let file = create(&path).unwrap();
        write_array(&file, &path, "rawdata", &d.samples.clone().insert_axis(Axis(3))).unwrap();
        let traj = d.trajectory.view().reversed_axes().to_owned();
        write_array(&file, &path, "trajectory", &traj).unwrap();
        drop(file);
        assert_eq!(read_dataset(&path, &DatasetNames::default()).unwrap(), d);
    }

    #[test]
    fn empty_coil_dimension_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.h5");
        let d = KSpaceDataset::new(Array3::zeros((0, 4, 6)), Array3::zeros((3, 4, 6)));
        assert!(matches!(
            write_dataset(&path, &d, &DatasetNames::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn unreadable_path_names_the_file() {
        let err = read_dataset(Path::new("/nonexistent/x.h5"), &DatasetNames::default()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.h5"));
    }

    #[test]
    fn image_and_ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let im = Image::new(Array2::from_shape_fn((4, 4), |(r, c)| C64::new(r as f64, -(c as f64) / 7.0)));
        let p = dir.path().join("im.h5");
        write_image(&p, &im).unwrap();
        assert_eq!(read_image(&p).unwrap(), im);

        let truth = GroundTruth {
            phantom: Array2::from_shape_fn((4, 4), |(r, c)| (r * c) as f64 / 3.0),
            sensitivities: Array3::from_elem((2, 4, 4), C64::new(0.1, 0.2)),
            mask: Array2::from_shape_fn((4, 4), |(r, c)| r * c > 0),
        };
        let g = dir.path().join("truth.h5");
        write_ground_truth(&g, &truth).unwrap();
        assert_eq!(read_ground_truth(&g).unwrap(), truth);
        assert_eq!(read_image(&g).unwrap(), Image::from_real(truth.phantom.view()));
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.h5");
        let w = Array2::from_shape_fn((3, 5), |(s, r)| (s * 5 + r) as f64 / 11.0);
        write_weights(&p, &w).unwrap();
        assert_eq!(read_weights(&p).unwrap(), w);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("/a/b/sim.h5"), "_truth.h5"), PathBuf::from("/a/b/sim_truth.h5"));
    }
}
