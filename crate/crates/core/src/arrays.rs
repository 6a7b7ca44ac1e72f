//! Shared numeric-array container: compressed NumPy `.npz` archives.
//!
//! Label rolls, spectrograms, posteriorgrams and attention maps are all
//! stored this way so they can be inspected with NumPy directly.

use std::fs::File;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, Ix1, Ix2};
use ndarray_npy::{NpzReader, NpzWriter};

use crate::error::{Error, Result};

pub enum NamedArray {
    F64(ArrayD<f64>),
    U8(ArrayD<u8>),
}

fn npz_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Array(format!("{}: {e}", path.display()))
}

pub fn write_npz(path: impl AsRef<Path>, arrays: &[(&str, NamedArray)]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut npz = NpzWriter::new_compressed(file);
    for (name, arr) in arrays {
        match arr {
            NamedArray::F64(a) => npz.add_array(*name, a),
            NamedArray::U8(a) => npz.add_array(*name, a),
        }
        .map_err(|e| npz_err(path, e))?;
    }
    npz.finish().map_err(|e| npz_err(path, e))?;
    Ok(())
}

fn reader(path: &Path) -> Result<NpzReader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    NpzReader::new(file).map_err(|e| npz_err(path, e))
}

pub fn read_f64_dyn(path: impl AsRef<Path>, name: &str) -> Result<ArrayD<f64>> {
    let path = path.as_ref();
    reader(path)?
        .by_name(name)
        .map_err(|e| npz_err(path, format!("{name}: {e}")))
}

pub fn read_f64(path: impl AsRef<Path>, name: &str) -> Result<Array1<f64>> {
    let path = path.as_ref();
    read_f64_dyn(path, name)?
        .into_dimensionality::<Ix1>()
        .map_err(|e| npz_err(path, e))
}

pub fn read_f64_2d(path: impl AsRef<Path>, name: &str) -> Result<Array2<f64>> {
    let path = path.as_ref();
    read_f64_dyn(path, name)?
        .into_dimensionality::<Ix2>()
        .map_err(|e| npz_err(path, e))
}

pub fn read_u8_2d(path: impl AsRef<Path>, name: &str) -> Result<Array2<u8>> {
    let path = path.as_ref();
    let a: ArrayD<u8> = reader(path)?
        .by_name(name)
        .map_err(|e| npz_err(path, format!("{name}: {e}")))?;
    a.into_dimensionality::<Ix2>().map_err(|e| npz_err(path, e))
}

pub fn names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    reader(path)?.names().map_err(|e| npz_err(path, e))
}
