//! Controller checkpoints: magic `SSCK`, `u32` version, the configuration as
//! length-prefixed JSON, then every parameter as a length-prefixed name,
//! `u32` rows and cols, and little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Controller, ControllerConfig};
use crate::error::{Error, Result};
use crate::numkit::{Parameterized, RngStream, StreamId};

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint<W: Write>(controller: &Controller, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION as usize)?;
    let config = serde_json::to_vec(&controller.config)?;
    put_u32(&mut w, config.len())?;
    w.write_all(&config)?;
    let params = controller.params();
    put_u32(&mut w, params.len())?;
    for p in params {
        put_u32(&mut w, p.name.len())?;
        w.write_all(p.name.as_bytes())?;
        put_u32(&mut w, p.value.rows())?;
        put_u32(&mut w, p.value.cols())?;
        for &x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Controller> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a controller checkpoint".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut config = vec![0u8; get_u32(&mut r)?];
    r.read_exact(&mut config)?;
    let config: ControllerConfig = serde_json::from_slice(&config)?;
    let mut controller = Controller::new(config, &mut RngStream::new(0, StreamId::ControllerInit))?;
    let count = get_u32(&mut r)?;
    let mut params = controller.params_mut();
    if count != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, configuration expects {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let mut name = vec![0u8; get_u32(&mut r)?];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let (rows, cols) = (get_u32(&mut r)?, get_u32(&mut r)?);
        if name != p.name || (rows, cols) != p.value.shape() {
            return Err(Error::Format(format!(
                "tensor {name} {rows}x{cols} does not match expected {} {}x{}",
                p.name,
                p.value.rows(),
                p.value.cols()
            )));
        }
        let mut buf = [0u8; 8];
        for x in p.value.data_mut() {
            r.read_exact(&mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
        p.zero_grad();
    }
    Ok(controller)
}

pub fn save_checkpoint(controller: &Controller, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(controller, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Controller> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
