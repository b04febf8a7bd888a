//! Model checkpoints.
//!
//! # Layout (version 1, little-endian)
//!
//! ```text
//! magic "SATJAMCK"                     8 bytes
//! version                              u32
//! input height, width, channels        3 x u32
//! conv1, conv2, fc1, classes           4 x u32
//! dropout rate                         f64
//! tensor count (10)                    u32
//! per tensor, in layer order:          u64 length, then f32 values
//!   conv1.weight, bn1.gamma, bn1.beta, conv2.weight, bn2.gamma, bn2.beta,
//!   fc1.weight, fc1.bias, fc2.weight, fc2.bias
//! running stats:                       4 x (u64 length, f32 values)
//!   bn1.mean, bn1.var, bn2.mean, bn2.var
//! optimizer flag                       u8 (0 = absent, 1 = present)
//! if present:
//!   step                               u64
//!   lr, beta1, beta2, eps              4 x f64
//!   first moments                      10 x (u64 length, f32 values)
//!   second moments                     10 x (u64 length, f32 values)
//! ```
//!
//! Weight matrices are row-major `fan_in x fan_out`; convolution kernels use
//! row `(ky * 3 + kx) * in_channels + c`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::adam::{Adam, AdamConfig};
use crate::arch::Architecture;
use crate::error::{CnnError, Result};
use crate::network::Network;
use crate::params::{slot, Params, RunningStats};

pub const MAGIC: [u8; 8] = *b"SATJAMCK";
pub const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CnnError::Config(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_tensor(w: &mut impl Write, t: &[f32]) -> Result<()> {
    w.write_all(&(t.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * 8192);
    for chunk in t.chunks(8192) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CnnError::Format("truncated checkpoint".into()),
        _ => CnnError::Io(e),
    })?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(get(r)?) as usize)
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(get(r)?))
}

fn get_tensor(r: &mut impl Read, expected: usize, name: &str) -> Result<Vec<f32>> {
    let len = u64::from_le_bytes(get(r)?) as usize;
    if len != expected {
        return Err(CnnError::Format(format!("{name}: {len} values, expected {expected}")));
    }
    let mut bytes = vec![0u8; 4 * len];
    r.read_exact(&mut bytes)
        .map_err(|_| CnnError::Format(format!("{name}: truncated")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

pub fn write_checkpoint(w: &mut impl Write, net: &Network<f32>, opt: Option<&Adam<f32>>) -> Result<()> {
    let a = &net.arch;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in [a.input.0, a.input.1, a.input.2, a.conv1, a.conv2, a.fc1, a.classes] {
        put_u32(w, d)?;
    }
    w.write_all(&a.dropout.to_le_bytes())?;
    put_u32(w, slot::COUNT)?;
    for t in &net.params.tensors {
        put_tensor(w, t)?;
    }
    let r = &net.running;
    for t in [&r.mean1, &r.var1, &r.mean2, &r.var2] {
        put_tensor(w, t)?;
    }
    match opt {
        None => w.write_all(&[0])?,
        Some(opt) => {
            w.write_all(&[1])?;
            w.write_all(&opt.step.to_le_bytes())?;
            let c = opt.config;
            for v in [c.lr, c.beta1, c.beta2, c.eps] {
                w.write_all(&v.to_le_bytes())?;
            }
            for t in opt.m.tensors.iter().chain(&opt.v.tensors) {
                put_tensor(w, t)?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(Network<f32>, Option<Adam<f32>>)> {
    if get::<8>(r)? != MAGIC {
        return Err(CnnError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(get(r)?);
    if version != VERSION {
        return Err(CnnError::Format(format!("version {version}, expected {VERSION}")));
    }
    let mut d = [0usize; 7];
    for v in d.iter_mut() {
        *v = get_u32(r)?;
    }
    let arch = Architecture {
        input: (d[0], d[1], d[2]),
        conv1: d[3],
        conv2: d[4],
        fc1: d[5],
        classes: d[6],
        dropout: get_f64(r)?,
    };
    arch.validate().map_err(|e| CnnError::Format(e.to_string()))?;
    let count = get_u32(r)?;
    if count != slot::COUNT {
        return Err(CnnError::Format(format!("{count} tensors, expected {}", slot::COUNT)));
    }
    let shapes = arch.param_shapes();
    let read_params = |r: &mut dyn Read| -> Result<Params<f32>> {
        let mut r = r;
        Ok(Params {
            tensors: shapes
                .iter()
                .map(|&(name, rows, cols)| get_tensor(&mut r, rows * cols, name))
                .collect::<Result<_>>()?,
        })
    };
    let params = read_params(r)?;
    let running = RunningStats {
        mean1: get_tensor(r, arch.conv1, "bn1.mean")?,
        var1: get_tensor(r, arch.conv1, "bn1.var")?,
        mean2: get_tensor(r, arch.conv2, "bn2.mean")?,
        var2: get_tensor(r, arch.conv2, "bn2.var")?,
    };
    let opt = match get::<1>(r)?[0] {
        0 => None,
        1 => {
            let step = u64::from_le_bytes(get(r)?);
            let config = AdamConfig {
                lr: get_f64(r)?,
                beta1: get_f64(r)?,
                beta2: get_f64(r)?,
                eps: get_f64(r)?,
            };
            let m = read_params(r)?;
            let v = read_params(r)?;
            Some(Adam { config, step, m, v })
        }
        f => return Err(CnnError::Format(format!("optimizer flag {f}"))),
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CnnError::Format("trailing bytes".into()));
    }
    let net = Network::from_parts(arch, params, running).map_err(|e| CnnError::Format(e.to_string()))?;
    Ok((net, opt))
}

pub fn save_checkpoint(path: &Path, net: &Network<f32>, opt: Option<&Adam<f32>>) -> Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    write_checkpoint(&mut w, net, opt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, Option<Adam<f32>>)> {
    read_checkpoint(&mut BufReader::with_capacity(1 << 20, File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network<f32> {
        let arch = Architecture {
            input: (6, 5, 2),
            conv1: 3,
            conv2: 2,
            fc1: 4,
            classes: 2,
            dropout: 0.5,
        };
        let mut net = Network::new(arch, 3).unwrap();
        net.running.mean1 = vec![0.1, -0.2, 0.3];
        net.running.var2 = vec![1.5, 0.25];
        net
    }

    #[test]
    fn round_trip_without_optimizer() {
        let net = small();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net, None).unwrap();
        let (back, opt) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert!(opt.is_none());
    }

    #[test]
    fn round_trip_with_optimizer() {
        let net = small();
        let mut opt = Adam::new(AdamConfig::default(), &net.arch);
        let mut p = net.params.clone();
        let g = net.params.clone();
        opt.update(&mut p, &g).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net, Some(&opt)).unwrap();
        let (back, back_opt) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back_opt.unwrap(), opt);
    }

    #[test]
    fn header_fields_sit_at_documented_offsets() {
        let net = small();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net, None).unwrap();
        assert_eq!(&buf[..8], b"SATJAMCK");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(buf[36..40].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[40..48].try_into().unwrap()), 0.5);
        assert_eq!(u32::from_le_bytes(buf[48..52].try_into().unwrap()), 10);
        let first = f32::from_le_bytes(buf[60..64].try_into().unwrap());
        assert_eq!(first, net.params.tensors[0][0]);
    }

    #[test]
    fn corruption_is_reported() {
        let net = small();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net, None).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(CnnError::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(&mut &short[..]), Err(CnnError::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(&mut long.as_slice()), Err(CnnError::Format(_))));
    }
}
