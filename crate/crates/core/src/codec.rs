//! Versioned binary container shared by the model files.
//!
//! ```text
//! magic      4 bytes
//! version    u32 LE
//! header     u32 LE length, then UTF-8 `key=value` lines
//! sections   repeated: u32 LE name length, name, u64 LE count, count f64 LE
//! ```
//!
//! Floats in the header use Rust's shortest round-trip formatting, so a
//! write/read cycle is bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::{Error, Result};

#[derive(Debug, Default)]
pub(crate) struct Container {
    pub header: BTreeMap<String, String>,
    pub sections: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.insert(key.to_string(), value.to_string());
    }

    pub fn push(&mut self, name: &str, data: Vec<f64>) {
        self.sections.push((name.to_string(), data));
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .header
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing header key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn take(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let pos = self
            .sections
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing section `{name}`")))?;
        let (_, data) = self.sections.remove(pos);
        if data.len() != len {
            return Err(Error::Format(format!(
                "section `{name}` has {} values, expected {len}",
                data.len()
            )));
        }
        Ok(data)
    }

    pub fn take_any(&mut self, name: &str) -> Result<Vec<f64>> {
        let pos = self
            .sections
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing section `{name}`")))?;
        Ok(self.sections.remove(pos).1)
    }

    pub fn write_to<W: Write>(&self, w: &mut W, magic: &[u8; 4], version: u32) -> Result<()> {
        w.write_all(magic)?;
        w.write_u32::<LittleEndian>(version)?;
        let mut header = String::new();
        for (k, v) in &self.header {
            header.push_str(k);
            header.push('=');
            header.push_str(v);
            header.push('\n');
        }
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(header.as_bytes())?;
        for (name, data) in &self.sections {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u64::<LittleEndian>(data.len() as u64)?;
            let mut buf = Vec::with_capacity(data.len() * 8);
            for &x in data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, magic: &[u8; 4], version: u32) -> Result<Self> {
        let mut m = [0u8; 4];
        r.read_exact(&mut m)?;
        if &m != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = r.read_u32::<LittleEndian>()?;
        if v != version {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        let hlen = r.read_u32::<LittleEndian>()? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let text = String::from_utf8(hbuf).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let mut header = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let mut sections = Vec::new();
        loop {
            let nlen = match r.read_u32::<LittleEndian>() {
                Ok(n) => n as usize,
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            };
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf)?;
            let name =
                String::from_utf8(nbuf).map_err(|_| Error::Format("bad section name".into()))?;
            let count = r.read_u64::<LittleEndian>()? as usize;
            let mut raw = vec![0u8; count * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            sections.push((name, data));
        }
        Ok(Self { header, sections })
    }
}
