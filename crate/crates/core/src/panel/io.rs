use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{AssetMeta, DropEntry, DropReason, RawRecord, ReturnPanel};
use crate::error::{Error, Result};

const CACHE_MAGIC: &[u8; 4] = b"TSFB";
pub const CACHE_FORMAT: u16 = 1;
/// Tag of the optional market-cap section that follows the mask.
const CAP_SECTION: &[u8; 4] = b"MCAP";

pub const RAW_HEADER: [&str; 9] = [
    "date",
    "asset_id",
    "country",
    "price",
    "dividend",
    "risk_free_daily",
    "market_cap",
    "delist_flag",
    "delist_return",
];

fn schema(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn opt_f64(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| schema(row, column, format!("cannot parse {s:?} as a number")))
}

fn parse_bool(raw: &str, row: usize) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "f" | "no" => Ok(false),
        "1" | "true" | "t" | "yes" => Ok(true),
        other => Err(schema(row, "delist_flag", format!("cannot parse {other:?} as a boolean"))),
    }
}

/// Reads the raw record CSV. Row numbers in errors count the header as row 1.
pub fn read_raw_csv<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| schema(1, "header", e.to_string()))?.clone();
    let mut idx = [0usize; 9];
    for (k, name) in RAW_HEADER.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| schema(1, name, "missing column"))?;
    }
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 2;
        let rec = rec.map_err(|e| schema(row, "record", e.to_string()))?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("");
        let date = NaiveDate::parse_from_str(f(0).trim(), "%Y-%m-%d")
            .map_err(|_| schema(row, "date", format!("cannot parse {:?} as an ISO-8601 date", f(0))))?;
        let asset_id = f(1).trim().to_string();
        if asset_id.is_empty() {
            return Err(schema(row, "asset_id", "empty asset id"));
        }
        out.push(RawRecord {
            date,
            asset_id,
            country: f(2).trim().to_string(),
            price: opt_f64(f(3), row, "price")?,
            dividend: opt_f64(f(4), row, "dividend")?.unwrap_or(0.0),
            risk_free_daily: opt_f64(f(5), row, "risk_free_daily")?.unwrap_or(0.0),
            market_cap: opt_f64(f(6), row, "market_cap")?,
            delist_flag: parse_bool(f(7), row)?,
            delist_return: opt_f64(f(8), row, "delist_return")?,
        });
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_raw_csv<W: Write>(writer: W, records: &[RawRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RAW_HEADER)?;
    for r in records {
        w.write_record([
            r.date.to_string(),
            r.asset_id.clone(),
            r.country.clone(),
            fmt_opt(r.price),
            r.dividend.to_string(),
            r.risk_free_daily.to_string(),
            fmt_opt(r.market_cap),
            r.delist_flag.to_string(),
            fmt_opt(r.delist_return),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_drop_log<W: Write>(writer: W, drops: &[DropEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "asset_id", "reason"])?;
    for d in drops {
        w.write_record([d.date.to_string(), d.asset_id.clone(), d.reason.as_str().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_drop_log<R: Read>(reader: R) -> Result<Vec<DropEntry>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 2;
        let rec = rec?;
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| schema(row, "date", "bad date"))?;
        let reason = DropReason::parse(&rec[2]).ok_or_else(|| schema(row, "reason", "unknown reason code"))?;
        out.push(DropEntry {
            date,
            asset_id: rec[1].to_string(),
            reason,
        });
    }
    Ok(out)
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("string too long for cache: {s}")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes a panel: magic `TSFB`, format u16, date and asset counts,
/// date table (days since 0001-01-01 as i32), asset table, row-major `f64`
/// returns, the validity bitset, then a tagged market-cap section.
pub fn write_cache<W: Write>(mut w: W, panel: &ReturnPanel) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_FORMAT.to_le_bytes());
    buf.extend_from_slice(&(panel.n_dates() as u32).to_le_bytes());
    buf.extend_from_slice(&(panel.n_assets() as u32).to_le_bytes());
    for d in panel.dates() {
        buf.extend_from_slice(&chrono::Datelike::num_days_from_ce(d).to_le_bytes());
    }
    for a in panel.assets() {
        put_str(&mut buf, &a.id)?;
        put_str(&mut buf, &a.country)?;
    }
    for v in panel.returns_raw() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mask = panel.mask();
    let mut bits = vec![0u8; mask.len().div_ceil(8)];
    for (k, &m) in mask.iter().enumerate() {
        if m {
            bits[k / 8] |= 1 << (k % 8);
        }
    }
    buf.extend_from_slice(&bits);
    buf.extend_from_slice(CAP_SECTION);
    for v in panel.market_caps_raw() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated panel cache".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("non UTF-8 string in cache".into()))
    }
}

pub fn read_cache<R: Read>(mut r: R) -> Result<ReturnPanel> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != CACHE_MAGIC {
        return Err(Error::Format("not a panel cache (bad magic)".into()));
    }
    let format = c.u16()?;
    if format != CACHE_FORMAT {
        return Err(Error::Format(format!("unsupported panel cache format {format}")));
    }
    let t = c.u32()? as usize;
    let n = c.u32()? as usize;
    let mut dates = Vec::with_capacity(t);
    for _ in 0..t {
        let days = c.i32()?;
        dates.push(NaiveDate::from_num_days_from_ce_opt(days).ok_or_else(|| Error::Format("bad date".into()))?);
    }
    let mut assets = Vec::with_capacity(n);
    for _ in 0..n {
        let id = c.string()?;
        let country = c.string()?;
        assets.push(AssetMeta { id, country });
    }
    let cells = t * n;
    let mut returns = Vec::with_capacity(cells);
    for _ in 0..cells {
        returns.push(c.f64()?);
    }
    let bits = c.take(cells.div_ceil(8))?;
    let mask: Vec<bool> = (0..cells).map(|k| bits[k / 8] >> (k % 8) & 1 == 1).collect();
    let mut caps = vec![f64::NAN; cells];
    if c.pos < buf.len() {
        if c.take(4)? != CAP_SECTION {
            return Err(Error::Format("unknown trailing section in panel cache".into()));
        }
        for v in caps.iter_mut() {
            *v = c.f64()?;
        }
    }
    ReturnPanel::from_parts(dates, assets, returns, mask, caps)
}
