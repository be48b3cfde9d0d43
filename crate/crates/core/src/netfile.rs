//! Versioned text serialization of a [`MaskedMlp`].
//!
//! ```text
//! pmlp-network 1
//! inputs 7
//! hidden 2
//! params <m values, 17 significant digits>
//! mask <m flags, 0 or 1>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::mlp::{ConnectionMask, MaskedMlp, ParamVector, Topology};

const MAGIC: &str = "pmlp-network";
const VERSION: u32 = 1;

pub fn to_text(net: &MaskedMlp) -> String {
    let t = net.topology();
    let mut s = String::new();
    writeln!(s, "{MAGIC} {VERSION}").unwrap();
    writeln!(s, "inputs {}", t.n_inputs()).unwrap();
    writeln!(s, "hidden {}", t.n_hidden()).unwrap();
    s.push_str("params");
    for v in net.params().iter() {
        write!(s, " {v:.16e}").unwrap();
    }
    s.push_str("\nmask");
    for &a in net.mask().as_slice() {
        s.push_str(if a { " 1" } else { " 0" });
    }
    s.push('\n');
    s
}

pub fn save(net: &MaskedMlp, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), to_text(net).as_bytes())
}

pub fn load(path: impl AsRef<Path>) -> Result<MaskedMlp> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

/// Whitespace tokenizer that remembers byte offsets for diagnostics.
struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let skipped = rest.len() - rest.trim_start().len();
        let start = self.pos + skipped;
        let tail = &self.text[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        if len == 0 {
            return Err(Error::NetworkFormat {
                offset: start,
                message: format!("unexpected end of file, expected {what}"),
            });
        }
        self.pos = start + len;
        Ok((start, &tail[..len]))
    }

    fn keyword(&mut self, word: &str) -> Result<()> {
        let (at, tok) = self.next(word)?;
        if tok != word {
            return Err(Error::NetworkFormat {
                offset: at,
                message: format!("expected {word:?}, found {tok:?}"),
            });
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (at, tok) = self.next(what)?;
        tok.parse().map_err(|_| Error::NetworkFormat {
            offset: at,
            message: format!("invalid {what}: {tok:?}"),
        })
    }
}

pub fn from_text(text: &str) -> Result<MaskedMlp> {
    let mut tok = Tokens { text, pos: 0 };
    tok.keyword(MAGIC)?;
    let (at, version) = tok.next("format version")?;
    if version != VERSION.to_string() {
        return Err(Error::NetworkFormat {
            offset: at,
            message: format!("unsupported format version {version:?}"),
        });
    }
    tok.keyword("inputs")?;
    let p: usize = tok.parse("input count")?;
    tok.keyword("hidden")?;
    let h: usize = tok.parse("hidden count")?;
    let topology = Topology::new(p, h).map_err(|e| Error::NetworkFormat {
        offset: tok.pos,
        message: e.to_string(),
    })?;
    let m = topology.n_params();

    tok.keyword("params")?;
    let mut params = Vec::with_capacity(m);
    for _ in 0..m {
        let (at, raw) = tok.next("parameter value")?;
        let v: f64 = raw.parse().map_err(|_| Error::NetworkFormat {
            offset: at,
            message: format!("invalid parameter value {raw:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::NetworkFormat {
                offset: at,
                message: "non-finite parameter".into(),
            });
        }
        params.push(v);
    }

    tok.keyword("mask")?;
    let mut flags = Vec::with_capacity(m);
    for _ in 0..m {
        let (at, raw) = tok.next("mask flag")?;
        flags.push(match raw {
            "1" => true,
            "0" => false,
            _ => {
                return Err(Error::NetworkFormat {
                    offset: at,
                    message: format!("mask flag must be 0 or 1, found {raw:?}"),
                })
            }
        });
    }
    if let Ok((at, extra)) = tok.next("end of file") {
        return Err(Error::NetworkFormat {
            offset: at,
            message: format!("trailing content {extra:?}"),
        });
    }

    let mask = ConnectionMask::from_flags(flags);
    if params
        .iter()
        .zip(mask.as_slice())
        .any(|(&v, &a)| !a && v != 0.0)
    {
        return Err(Error::NetworkFormat {
            offset: text.len(),
            message: "masked parameter stored with a nonzero value".into(),
        });
    }
    MaskedMlp::new(topology, ParamVector::new(params)?, mask).map_err(|e| Error::NetworkFormat {
        offset: text.len(),
        message: e.to_string(),
    })
}
