//! Versioned, checksummed little-endian binary formats.
//!
//! Every file ends with a CRC-64 (XZ) of all preceding bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};

use crate::da::ObsBatch;
use crate::error::{Error, Result};
use crate::qg::Snapshot;
use crate::unet::{Checkpoint, NetConfig, NetParams, PatchDataset, PatchRecord, Standardization};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"QGST";
pub const TRAJECTORY_MAGIC: [u8; 4] = *b"QGTJ";
pub const DATASET_MAGIC: [u8; 4] = *b"QGPD";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UNWT";
pub const OBS_MAGIC: [u8; 4] = *b"QGOB";
pub const FORMAT_VERSION: u32 = 1;

const CRC: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn checksum(bytes: &[u8]) -> u64 {
    CRC.checksum(bytes)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn header(magic: [u8; 4]) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&magic);
        w.u32(FORMAT_VERSION);
        w
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }
    fn finish(mut self) -> Vec<u8> {
        let c = checksum(&self.0);
        self.u64(c);
        self.0
    }
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("{what} needs {n} bytes at offset {}, file body has {}", self.pos, self.buf.len()),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn format(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Checks magic and version, then the body length and checksum. Returns
/// the body (header included, checksum excluded).
fn open<'a>(path: &'a Path, bytes: &'a [u8], magic: [u8; 4], min_body: usize) -> Result<Reader<'a>> {
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} bytes is shorter than a header", bytes.len()),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < min_body.max(8) + 8 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} bytes, expected at least {}", bytes.len(), min_body.max(8) + 8),
        });
    }
    Ok(Reader {
        path,
        buf: bytes,
        pos: 8,
    })
}

/// After the header has told us the exact length: truncation, then checksum.
fn seal<'a>(r: Reader<'a>, body_len: usize) -> Result<Reader<'a>> {
    let total = body_len + 8;
    if r.buf.len() < total {
        return Err(Error::Truncated {
            path: r.path.to_path_buf(),
            detail: format!("{} bytes, header implies {total}", r.buf.len()),
        });
    }
    if r.buf.len() > total {
        return Err(r.format(format!("{} bytes, header implies {total}", r.buf.len())));
    }
    let stored = u64::from_le_bytes(r.buf[body_len..].try_into().unwrap());
    let computed = checksum(&r.buf[..body_len]);
    if stored != computed {
        return Err(Error::Checksum {
            path: r.path.to_path_buf(),
            stored,
            computed,
        });
    }
    Ok(Reader {
        path: r.path,
        buf: &r.buf[..body_len],
        pos: r.pos,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

// ---- snapshots -----------------------------------------------------------

fn snapshot_body(w: &mut Writer, s: &Snapshot) {
    w.u32(s.n() as u32);
    w.u32(2);
    w.f64(s.time);
    w.f64s(s.as_slice());
}

pub fn encode_snapshot(s: &Snapshot) -> Vec<u8> {
    let mut w = Writer::header(SNAPSHOT_MAGIC);
    snapshot_body(&mut w, s);
    w.finish()
}

fn parse_snapshot(r: &mut Reader) -> Result<Snapshot> {
    let n = r.u32("grid size")? as usize;
    let layers = r.u32("layer count")? as usize;
    if layers != 2 || n == 0 {
        return Err(r.format(format!("unsupported snapshot shape {layers} × {n} × {n}")));
    }
    let time = r.f64("time")?;
    let q = r.f64s(2 * n * n, "payload")?;
    Ok(Snapshot {
        time,
        q: ndarray::Array3::from_shape_vec((2, n, n), q).unwrap(),
    })
}

pub fn decode_snapshot(path: &Path, bytes: &[u8]) -> Result<Snapshot> {
    let mut r = open(path, bytes, SNAPSHOT_MAGIC, 24)?;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 24 + 16 * n * n;
    r = seal(r, body)?;
    let s = parse_snapshot(&mut r)?;
    r.done()?;
    Ok(s)
}

pub fn write_snapshot(path: &Path, s: &Snapshot) -> Result<()> {
    write_bytes(path, &encode_snapshot(s))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    decode_snapshot(path, &read_file(path)?)
}

/// Trajectory: header with a snapshot count, then snapshot records
/// (`n`, layers, time, payload) back to back.
pub fn encode_trajectory(snaps: &[Snapshot]) -> Vec<u8> {
    let mut w = Writer::header(TRAJECTORY_MAGIC);
    w.u64(snaps.len() as u64);
    for s in snaps {
        snapshot_body(&mut w, s);
    }
    w.finish()
}

pub fn decode_trajectory(path: &Path, bytes: &[u8]) -> Result<Vec<Snapshot>> {
    let mut r = open(path, bytes, TRAJECTORY_MAGIC, 16)?;
    let count = r.u64("snapshot count")? as usize;
    let n = if count > 0 && bytes.len() >= 20 {
        u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize
    } else {
        0
    };
    let body = 16 + count * (16 + 16 * n * n);
    r = seal(r, body)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let s = parse_snapshot(&mut r)?;
        if s.n() != n {
            return Err(r.format("snapshots in one trajectory must share a grid"));
        }
        out.push(s);
    }
    r.done()?;
    Ok(out)
}

pub fn write_trajectory(path: &Path, snaps: &[Snapshot]) -> Result<()> {
    write_bytes(path, &encode_trajectory(snaps))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<Snapshot>> {
    decode_trajectory(path, &read_file(path)?)
}

// ---- patch datasets ------------------------------------------------------

pub fn encode_dataset(ds: &PatchDataset) -> Vec<u8> {
    let mut w = Writer::header(DATASET_MAGIC);
    w.u32(ds.samples.len() as u32);
    w.u32(ds.p as u32);
    w.u32(2);
    w.u32(3);
    for s in &ds.samples {
        w.u64(s.cycle);
        w.u32(s.center);
        w.f32s(&s.input);
        w.f32s(&s.output);
    }
    w.finish()
}

pub fn decode_dataset(path: &Path, bytes: &[u8]) -> Result<PatchDataset> {
    let mut r = open(path, bytes, DATASET_MAGIC, 24)?;
    let count = r.u32("sample count")? as usize;
    let p = r.u32("patch side")? as usize;
    let (ci, co) = (r.u32("input channels")? as usize, r.u32("output channels")? as usize);
    if ci != 2 || co != 3 {
        return Err(r.format(format!("expected 2 input and 3 output channels, found {ci} and {co}")));
    }
    let per = 12 + 4 * (ci + co) * p * p;
    r = seal(r, 24 + count * per)?;
    let mut ds = PatchDataset::new(p);
    ds.samples.reserve(count);
    for _ in 0..count {
        ds.samples.push(PatchRecord {
            cycle: r.u64("cycle")?,
            center: r.u32("center")?,
            input: r.f32s(ci * p * p, "input")?,
            output: r.f32s(co * p * p, "output")?,
        });
    }
    r.done()?;
    Ok(ds)
}

pub fn write_dataset(path: &Path, ds: &PatchDataset) -> Result<()> {
    write_bytes(path, &encode_dataset(ds))
}

pub fn read_dataset(path: &Path) -> Result<PatchDataset> {
    decode_dataset(path, &read_file(path)?)
}

// ---- checkpoints ---------------------------------------------------------

/// Layout: config (in, out, width, depth, P as u32), standardization
/// (in mean, in sd, out mean, out sd as f64), parameter count (u64), f32
/// parameters in block order, checksum.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let c = ck.params.config;
    let mut w = Writer::header(CHECKPOINT_MAGIC);
    for v in [c.in_channels, c.out_channels, c.width, c.depth, ck.p] {
        w.u32(v as u32);
    }
    w.f64s(&ck.norm.in_mean);
    w.f64s(&ck.norm.in_sd);
    w.f64s(&ck.norm.out_mean);
    w.f64s(&ck.norm.out_sd);
    w.u64(ck.params.values.len() as u64);
    w.f32s(&ck.params.values);
    w.finish()
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = open(path, bytes, CHECKPOINT_MAGIC, 28)?;
    let mut f = [0usize; 5];
    for (k, v) in f.iter_mut().enumerate() {
        *v = r.u32(["in_channels", "out_channels", "width", "depth", "patch side"][k])? as usize;
    }
    let config = NetConfig {
        in_channels: f[0],
        out_channels: f[1],
        width: f[2],
        depth: f[3],
    };
    config.validate().map_err(|e| r.format(e.to_string()))?;
    let stats = 16 * (config.in_channels + config.out_channels);
    let expected = config.param_count();
    let body = 28 + stats + 8 + 4 * expected;
    r = seal(r, body)?;
    let norm = Standardization {
        in_mean: r.f64s(config.in_channels, "input means")?,
        in_sd: r.f64s(config.in_channels, "input sds")?,
        out_mean: r.f64s(config.out_channels, "output means")?,
        out_sd: r.f64s(config.out_channels, "output sds")?,
    };
    let count = r.u64("parameter count")? as usize;
    if count != expected {
        return Err(r.format(format!("{count} parameters, configuration needs {expected}")));
    }
    let values = r.f32s(count, "parameters")?;
    r.done()?;
    Ok(Checkpoint {
        p: f[4],
        norm,
        params: NetParams { config, values },
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ck))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(path, &read_file(path)?)
}

// ---- observations --------------------------------------------------------

/// Layout: batch count (u32), then per batch time (f64), location count
/// (u32), error sd (2 × f64), locations (x, y f64 pairs), layer-major values.
pub fn encode_observations(batches: &[ObsBatch]) -> Vec<u8> {
    let mut w = Writer::header(OBS_MAGIC);
    w.u32(batches.len() as u32);
    for b in batches {
        w.f64(b.time);
        w.u32(b.locations.len() as u32);
        w.f64s(&b.error_sd);
        for &(x, y) in &b.locations {
            w.f64(x);
            w.f64(y);
        }
        w.f64s(&b.values);
    }
    w.finish()
}

pub fn decode_observations(path: &Path, bytes: &[u8]) -> Result<Vec<ObsBatch>> {
    let r = open(path, bytes, OBS_MAGIC, 12)?;
    // Variable-length records: walk the headers to find the body length.
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut body = 12usize;
    for _ in 0..count {
        if body + 12 > bytes.len() {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                detail: "observation batch header".into(),
            });
        }
        let m = u32::from_le_bytes(bytes[body + 8..body + 12].try_into().unwrap()) as usize;
        body += 12 + 16 + 32 * m;
    }
    let mut r = seal(r, body)?;
    r.u32("batch count")?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let time = r.f64("time")?;
        let m = r.u32("location count")? as usize;
        let sd = r.f64s(2, "error sd")?;
        let flat = r.f64s(2 * m, "locations")?;
        let values = r.f64s(2 * m, "values")?;
        out.push(ObsBatch {
            time,
            locations: flat.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
            values,
            error_sd: [sd[0], sd[1]],
        });
    }
    r.done()?;
    Ok(out)
}

pub fn write_observations(path: &Path, batches: &[ObsBatch]) -> Result<()> {
    write_bytes(path, &encode_observations(batches))
}

pub fn read_observations(path: &Path) -> Result<Vec<ObsBatch>> {
    decode_observations(path, &read_file(path)?)
}

/// Path helper for error messages about missing upstream artifacts.
pub fn require(path: &Path, what: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing {what}")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::{NetConfig, NetParams};

    fn p(name: &str) -> PathBuf {
        PathBuf::from(name)
    }

    fn dataset(count: usize, p: usize) -> PatchDataset {
        let mut ds = PatchDataset::new(p);
        for k in 0..count {
            ds.samples.push(PatchRecord {
                cycle: k as u64 / 7,
                center: k as u32,
                input: (0..2 * p * p).map(|i| (i * k) as f32 * 1e-6).collect(),
                output: (0..3 * p * p).map(|i| (i as f32 - k as f32) * 1e-12).collect(),
            });
        }
        ds
    }

    fn snapshot(n: usize, t: f64) -> Snapshot {
        Snapshot {
            time: t,
            q: ndarray::Array3::from_shape_fn((2, n, n), |(l, y, x)| (l * 1000 + y * n + x) as f64 * 1e-7 + t),
        }
    }

    #[test]
    fn dataset_round_trip_and_truncation() {
        let ds = dataset(1024, 16);
        let bytes = encode_dataset(&ds);
        assert_eq!(decode_dataset(&p("d.qgpd"), &bytes).unwrap(), ds);
        let per = 12 + 4 * 5 * 256;
        let cut = &bytes[..bytes.len() - per];
        assert!(matches!(decode_dataset(&p("d"), cut), Err(Error::Truncated { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let cfg = NetConfig {
            width: 4,
            ..NetConfig::default()
        };
        let ck = Checkpoint {
            p: 16,
            norm: Standardization {
                in_mean: vec![1e-6, -2e-8],
                in_sd: vec![1e-5, 3e-7],
                out_mean: vec![1e-12, 0.0, 1e-15],
                out_sd: vec![2e-11, 1e-13, 5e-15],
            },
            params: NetParams::init(cfg, 4),
        };
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&p("c"), &bytes).unwrap();
        assert_eq!(back, ck);

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x01;
        assert!(matches!(decode_checkpoint(&p("c"), &flipped), Err(Error::Checksum { .. })));
        let mut payload = bytes.clone();
        payload[100] ^= 0x80;
        assert!(matches!(decode_checkpoint(&p("c"), &payload), Err(Error::Checksum { .. })));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&p("c"), &magic), Err(Error::BadMagic { .. })));
        let mut version = bytes;
        version[4] = 9;
        match decode_checkpoint(&p("c"), &version) {
            Err(Error::Version { found, expected, .. }) => assert_eq!((found, expected), (9, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn snapshots_and_trajectories() {
        let s = snapshot(16, 3600.0);
        assert_eq!(decode_snapshot(&p("s"), &encode_snapshot(&s)).unwrap(), s);
        let traj: Vec<Snapshot> = (0..5).map(|k| snapshot(16, k as f64 * 86400.0)).collect();
        let bytes = encode_trajectory(&traj);
        assert_eq!(decode_trajectory(&p("t"), &bytes).unwrap(), traj);
        assert!(decode_trajectory(&p("t"), &[]).is_err());
        assert_eq!(decode_trajectory(&p("t"), &encode_trajectory(&[])).unwrap(), vec![]);
        assert!(matches!(
            decode_trajectory(&p("t"), &bytes[..bytes.len() - 100]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(decode_snapshot(&p("t"), &bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn observations_round_trip() {
        let b = ObsBatch {
            time: 864000.0,
            locations: vec![(1.0, 2.0), (3.5e5, 9.9e5)],
            values: vec![1e-5, 2e-5, 3e-7, 4e-7],
            error_sd: [1e-5, 5e-7],
        };
        let all = vec![b.clone(), ObsBatch::empty(0.0), b];
        let bytes = encode_observations(&all);
        assert_eq!(decode_observations(&p("o"), &bytes).unwrap(), all);
        assert!(matches!(
            decode_observations(&p("o"), &bytes[..bytes.len() - 9]),
            Err(Error::Truncated { .. }) | Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn files_on_disk() {
        let dir = std::env::temp_dir().join(format!("unetkf-io-{}", std::process::id()));
        let path = dir.join("sub").join("x.qgpd");
        let ds = dataset(3, 8);
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
        assert!(matches!(read_dataset(&dir.join("missing")), Err(Error::Io { .. })));
        std::fs::remove_dir_all(dir).unwrap();
    }
}
