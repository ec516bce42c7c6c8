//! Serialization and atomic persistence of run outputs.
//!
//! Every float leaves the process as `{:.16e}`, i.e. 17 significant digits,
//! which round-trips `f64` exactly.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use aplat_core::TrajectorySample;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON with floats in 17-significant-digit scientific notation.
struct Sig17 {
    pretty: PrettyFormatter<'static>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {$(
        fn $name<W: ?Sized + Write>(&mut self, writer: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.pretty.$name(writer $(, $arg)*)
        }
    )*};
}

impl Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17 { pretty: PrettyFormatter::new() });
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::numerical(format!("cannot serialize output: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

/// Git-style object hash: SHA-256 over `"blob <len>\0" + content`.
pub fn blob_hash(content: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", content.len()).as_bytes());
    hasher.update(content);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// CSV with header `t,norm,u_<i0>,...,u_<i1>` over the inclusive site range.
pub fn trajectory_csv(traj: &TrajectorySample, sites: (i64, i64)) -> Result<Vec<u8>, CliError> {
    let first = traj.offset();
    let last = first + traj.width() as i64 - 1;
    if sites.0 > sites.1 || sites.0 < first || sites.1 > last {
        return Err(CliError::config(format!(
            "site range [{}, {}] is outside the window [{first}, {last}]",
            sites.0, sites.1
        )));
    }
    let lo = (sites.0 - first) as usize;
    let hi = (sites.1 - first) as usize;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "norm".to_string()];
    header.extend((sites.0..=sites.1).map(|i| format!("u_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (k, norm) in traj.norms().into_iter().enumerate() {
        let mut record = vec![fmt_f64(traj.times()[k]), fmt_f64(norm)];
        record.extend(traj.row(k)[lo..=hi].iter().map(|&x| fmt_f64(x)));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::numerical(e.to_string()))
}

/// Reads a trajectory CSV back. Site columns must be consecutive.
pub fn read_trajectory_csv(content: &[u8]) -> Result<TrajectorySample, CliError> {
    let mut r = csv::Reader::from_reader(content);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("t") || header.get(1) != Some("norm") || header.len() < 3 {
        return Err(CliError::config("trajectory CSV header must start with t,norm,u_<i>"));
    }
    let sites: Vec<i64> = header
        .iter()
        .skip(2)
        .map(|h| h.strip_prefix("u_").and_then(|s| s.parse().ok()))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::config("trajectory CSV site columns must be named u_<i>"))?;
    if sites.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(CliError::config("trajectory CSV site columns must be consecutive"));
    }
    let width = sites.len();
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("trajectory CSV row {}: bad number {s:?}", line + 2)))
        };
        times.push(parse(&record[0])?);
        for field in record.iter().skip(2) {
            data.push(parse(field)?);
        }
    }
    Ok(TrajectorySample::from_rows(times, sites[0], width, data)?)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::config(format!("csv: {e}"))
}

/// Writes each file through a temporary sibling and an atomic rename.
pub fn persist_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = tempfile::Builder::new()
            .prefix(&format!(".{name}."))
            .tempfile_in(dir)
            .map_err(|e| CliError::config(format!("cannot stage {name}: {e}")))?;
        tmp.write_all(bytes)
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| CliError::config(format!("cannot write {name}: {e}")))?;
        staged.push((tmp, dir.join(name)));
    }
    // Everything is staged before the first rename; a failure above leaves
    // only temporaries, which are removed on drop.
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, target) in staged {
        tmp.persist(&target)
            .map_err(|e| CliError::config(format!("cannot persist {}: {}", target.display(), e.error)))?;
        written.push(target);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_17_digits() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn json_floats_use_17_digits() {
        let bytes = to_json(&serde_json::json!({"a": [0.1, 2], "b": {"c": -1.5}})).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("-1.5000000000000000e0"), "{text}");
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"][0].as_f64(), Some(0.1));
        assert_eq!(back["a"][1].as_u64(), Some(2));
    }

    #[test]
    fn blob_hash_matches_git_sha256_objects() {
        // `git hash-object --object-format=sha256` of an empty file.
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let traj = TrajectorySample::from_rows(vec![0.0, 0.5], -1, 3, vec![0.1, -0.2, 0.3, 1.0 / 3.0, 0.0, 2.0]).unwrap();
        let bytes = trajectory_csv(&traj, (-1, 1)).unwrap();
        let text = std::str::from_utf8(&bytes).unwrap();
        assert!(text.starts_with("t,norm,u_-1,u_0,u_1\n"));
        let back = read_trajectory_csv(&bytes).unwrap();
        assert_eq!(back.times(), traj.times());
        assert_eq!(back.offset(), -1);
        assert_eq!(back.row(1), traj.row(1));
        assert!(trajectory_csv(&traj, (-2, 0)).is_err());
    }

    #[test]
    fn persist_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested");
        persist_all(&out, &[("a.txt".into(), b"x".to_vec()), ("b.txt".into(), b"y".to_vec())]).unwrap();
        assert_eq!(std::fs::read(out.join("b.txt")).unwrap(), b"y");
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2);
    }
}
