//! File formats.
//!
//! * Tensors and matrices: one ASCII header line `shape: n1 n2 ... nd`
//!   followed by the entries as little-endian f64 in column-major order.
//!   A matrix is the order-2 case. Headerless `.f64` blobs can be read with
//!   an explicit shape.
//! * Observations: a header line `# shape: n1 ... nd` then one line
//!   `i1 ... id value` per observed entry, indices 1-based.
//! * Design points: one real number per line.
//! * Fit traces: CSV `iteration,rel_error,objective,elapsed_s,inner_iters`,
//!   with row 0 holding the initialization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::als::FitTrace;
use crate::error::{Error, Result};
use crate::sampled::ObservationSet;
use crate::tensor::{check_shape, DenseTensor};
use crate::Matrix;

const SHAPE_TAG: &str = "shape:";

fn parse_shape(fields: &str) -> Result<Vec<usize>> {
    let shape = fields
        .split_whitespace()
        .map(|f| f.parse::<usize>().map_err(|_| Error::Parse(format!("bad dimension `{f}`"))))
        .collect::<Result<Vec<_>>>()?;
    check_shape(&shape)?;
    Ok(shape)
}

fn read_f64s(mut r: impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::with_capacity(count * 8);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Parse(format!(
            "expected {count} f64 values ({} bytes), found {} bytes",
            count * 8,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_array(path, t.shape(), t.data())
}

fn write_array(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    writeln!(w, "{SHAPE_TAG} {}", dims.join(" "))?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a tensor with a `shape:` header.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    r.read_until(b'\n', &mut header)?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Parse("tensor header is not text".into()))?;
    let fields = header
        .trim_end()
        .strip_prefix(SHAPE_TAG)
        .ok_or_else(|| Error::Parse(format!("tensor header must start with `{SHAPE_TAG}`")))?;
    let shape = parse_shape(fields)?;
    let len = shape.iter().product();
    DenseTensor::new(shape, read_f64s(r, len)?)
}

/// Reads a headerless little-endian f64 blob of the given shape.
pub fn read_raw_tensor(path: impl AsRef<Path>, shape: &[usize]) -> Result<DenseTensor> {
    let len = check_shape(shape)?;
    DenseTensor::new(shape.to_vec(), read_f64s(BufReader::new(File::open(path)?), len)?)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_array(path, &[m.nrows(), m.ncols()], m.as_slice())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let t = read_tensor(path)?;
    match *t.shape() {
        [n, r] => Ok(Matrix::from_vec(n, r, t.into_data())),
        _ => Err(Error::Parse(format!("expected a matrix, found order {}", t.order()))),
    }
}

pub fn write_observations(path: impl AsRef<Path>, obs: &ObservationSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dims: Vec<String> = obs.shape().iter().map(usize::to_string).collect();
    writeln!(w, "# {SHAPE_TAG} {}", dims.join(" "))?;
    for (l, v) in obs.values().iter().enumerate() {
        for i in obs.index(l) {
            write!(w, "{} ", i + 1)?;
        }
        writeln!(w, "{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations(path: impl AsRef<Path>) -> Result<ObservationSet> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines().enumerate();
    let shape = loop {
        let (_, line) = lines.next().ok_or_else(|| Error::Parse("empty observation file".into()))?;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = line
            .trim_start_matches('#')
            .trim()
            .strip_prefix(SHAPE_TAG)
            .ok_or_else(|| Error::Parse(format!("observation header must be `# {SHAPE_TAG} ...`")))?
            .to_owned();
        break parse_shape(&fields)?;
    };
    let d = shape.len();
    let (mut indices, mut values) = (Vec::new(), Vec::new());
    for (no, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, found {}",
                no + 1,
                d + 1,
                fields.len()
            )));
        }
        for f in &fields[..d] {
            let i: usize =
                f.parse().map_err(|_| Error::Parse(format!("line {}: bad index `{f}`", no + 1)))?;
            if i == 0 {
                return Err(Error::Parse(format!("line {}: indices are 1-based", no + 1)));
            }
            indices.push(i - 1);
        }
        values.push(
            fields[d]
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {}: bad value `{}`", no + 1, fields[d])))?,
        );
    }
    ObservationSet::new(shape, indices, values)
}

/// One real per line; blank lines and `#` comments are skipped.
pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse().map_err(|_| Error::Parse(format!("line {}: bad point `{line}`", no + 1)))?);
    }
    Ok(out)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &FitTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "rel_error", "objective", "elapsed_s", "inner_iters"])?;
    w.write_record([
        "0".into(),
        format!("{:e}", trace.initial_error),
        format!("{:e}", trace.initial_objective),
        "0".into(),
        "0".into(),
    ])?;
    for (i, it) in trace.iterations.iter().enumerate() {
        let inner: usize = it.reports.iter().flatten().map(|r| r.iterations).sum();
        w.write_record([
            (i + 1).to_string(),
            format!("{:e}", it.rel_error),
            format!("{:e}", it.objective),
            format!("{:.6}", it.elapsed.as_secs_f64()),
            inner.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampled::sample_uniform;

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::from_fn(&[3, 4, 2], |i| i[0] as f64 - 0.5 * i[1] as f64 + 1e-3 * i[2] as f64)
            .unwrap();
        let p = dir.path().join("t.bin");
        write_tensor(&p, &t).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    #[test]
    fn raw_blob_with_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.f64");
        let data: Vec<u8> = (0..6).flat_map(|v| (v as f64).to_le_bytes()).collect();
        std::fs::write(&p, data).unwrap();
        let t = read_raw_tensor(&p, &[2, 3]).unwrap();
        assert_eq!(t.get(&[1, 2]), 5.0);
        assert!(read_raw_tensor(&p, &[2, 2]).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 / 7.0);
        let p = dir.path().join("a.bin");
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::from_fn(&[4, 5, 6], |i| (i[0] + 2 * i[1]) as f64 / 3.0 - i[2] as f64)
            .unwrap();
        let obs = sample_uniform(&t, 37, 4).unwrap();
        let p = dir.path().join("obs.txt");
        write_observations(&p, &obs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 38);
        let back = read_observations(&p).unwrap();
        assert_eq!(back.shape(), obs.shape());
        assert_eq!(back.values(), obs.values());
        for l in 0..obs.q() {
            assert_eq!(back.index(l), obs.index(l));
        }
    }

    #[test]
    fn observation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "# shape: 2 2\n0 1 3.0\n").unwrap();
        assert!(matches!(read_observations(&p), Err(Error::Parse(_))));
        std::fs::write(&p, "# shape: 2 2\n1 1\n").unwrap();
        assert!(read_observations(&p).is_err());
        std::fs::write(&p, "1 1 3.0\n").unwrap();
        assert!(read_observations(&p).is_err());
        std::fs::write(&p, "# shape: 2 2\n3 1 3.0\n").unwrap();
        assert!(read_observations(&p).is_err());
    }

    #[test]
    fn points_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, "# grid\n0.5\n\n1.5\n2.25\n").unwrap();
        assert_eq!(read_points(&p).unwrap(), vec![0.5, 1.5, 2.25]);
        std::fs::write(&p, "abc\n").unwrap();
        assert!(read_points(&p).is_err());
    }
}
