//! File formats: PGM images, the vfield volume container and CSV tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thinline::pipelines::VesselField;
use thinline::raster::Image;

use crate::error::CliError;

/// Grayscale raster as stored in a PGM file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Pgm {
    /// Raw sample values.
    pub fn to_image(&self) -> Image<f64> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| v as f64).collect() }
    }

    /// Samples scaled to `[0, 1]`.
    pub fn to_unit_image(&self) -> Image<f64> {
        let m = self.maxval as f64;
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| v as f64 / m).collect() }
    }

    /// Nonzero samples.
    pub fn to_mask(&self) -> Image<bool> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| v > 0).collect() }
    }

    /// 8-bit image of values clamped to `[0, 255]` and rounded.
    pub fn from_image_u8(img: &Image<f64>) -> Self {
        let data = img.data.iter().map(|&v| v.clamp(0.0, 255.0).round() as u16).collect();
        Pgm { width: img.width, height: img.height, maxval: 255, data }
    }

    /// 16-bit image of probabilities quantized as `round(q * 65535)`.
    pub fn from_probabilities(img: &Image<f64>) -> Self {
        let data = img.data.iter().map(|&q| (q.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
        Pgm { width: img.width, height: img.height, maxval: 65535, data }
    }

    /// 8-bit binary mask with 255 for set pixels.
    pub fn from_mask(mask: &Image<bool>) -> Self {
        let data = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Pgm { width: mask.width, height: mask.height, maxval: 255, data }
    }
}

/// Splits PGM header tokens, skipping `#` comments. Returns the tokens and
/// the offset just past the single whitespace byte after the last token.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize), CliError> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        if i >= bytes.len() {
            return Err(CliError::input("truncated PGM header"));
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    Ok((tokens, i))
}

fn parse_dim(tok: &str, what: &str) -> Result<usize, CliError> {
    tok.parse::<usize>().map_err(|_| CliError::input(format!("bad PGM {what} '{tok}'")))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm, CliError> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    let binary = match tokens[0].as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(CliError::input(format!("not a PGM file (magic '{other}')"))),
    };
    let width = parse_dim(&tokens[1], "width")?;
    let height = parse_dim(&tokens[2], "height")?;
    let maxval = parse_dim(&tokens[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(CliError::input(format!("PGM has empty size {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(CliError::input(format!("PGM maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let data: Vec<u16> = if binary {
        let body = &bytes[offset..];
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if body.len() < need {
            return Err(CliError::input(format!("PGM raster has {} bytes, expected {need}", body.len())));
        }
        if wide {
            body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            body[..n].iter().map(|&b| b as u16).collect()
        }
    } else {
        let text = std::str::from_utf8(&bytes[offset..]).map_err(|_| CliError::input("PGM text raster is not ASCII"))?;
        let values = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| t.parse::<u16>().map_err(|_| CliError::input(format!("bad PGM sample '{t}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() < n {
            return Err(CliError::input(format!("PGM raster has {} samples, expected {n}", values.len())));
        }
        values
    };
    if let Some(v) = data.iter().find(|&&v| v as usize > maxval) {
        return Err(CliError::input(format!("PGM sample {v} exceeds maxval {maxval}")));
    }
    Ok(Pgm { width, height, maxval: maxval as u16, data })
}

pub fn read_pgm(path: &Path) -> Result<Pgm, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    parse_pgm(&bytes).map_err(|e| e.context(path))
}

/// Binary (P5) encoding; samples are big-endian words when `maxval > 255`.
pub fn encode_pgm(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        out.extend(img.data.iter().flat_map(|v| v.to_be_bytes()));
    } else {
        out.extend(img.data.iter().map(|&v| v as u8));
    }
    out
}

/// Plain (P2) encoding.
pub fn encode_pgm_ascii(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P2\n{} {}\n{}\n", img.width, img.height, img.maxval);
    for row in img.data.chunks(img.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_pgm(path: &Path, img: &Pgm) -> Result<(), CliError> {
    write_bytes(path, &encode_pgm(img))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

const VFIELD_MAGIC: &[u8; 4] = b"VFLD";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub dtype: String,
    pub fields: Vec<String>,
}

/// Named `f32` planes over a volume, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub planes: Vec<(String, Vec<f32>)>,
}

impl Volume {
    pub fn plane(&self, name: &str) -> Option<&[f32]> {
        self.planes.iter().find(|(n, _)| n == name).map(|(_, p)| p.as_slice())
    }

    pub fn from_field(field: &VesselField<f64>) -> Self {
        let f = |k: usize| field.g.iter().map(|g| g[k] as f32).collect();
        Volume {
            dims: field.dims,
            planes: vec![
                ("v".into(), field.v.iter().map(|&v| v as f32).collect()),
                ("gx".into(), f(0)),
                ("gy".into(), f(1)),
                ("gz".into(), f(2)),
                ("sigma".into(), field.sigma.iter().map(|&v| v as f32).collect()),
            ],
        }
    }

    pub fn to_field(&self) -> Result<VesselField<f64>, CliError> {
        let get = |name: &str| {
            self.plane(name)
                .map(|p| p.iter().map(|&v| v as f64).collect::<Vec<f64>>())
                .ok_or_else(|| CliError::input(format!("vfield lacks the '{name}' plane")))
        };
        let (v, gx, gy, gz, sigma) = (get("v")?, get("gx")?, get("gy")?, get("gz")?, get("sigma")?);
        let g = (0..v.len()).map(|i| [gx[i], gy[i], gz[i]]).collect();
        Ok(VesselField { dims: self.dims, v, g, sigma })
    }
}

/// `VFLD`, a little-endian `u32` header length, the JSON header, then the
/// planes as little-endian `f32` in header order.
pub fn encode_volume(vol: &Volume) -> Vec<u8> {
    let header = VolumeHeader {
        dims: vol.dims,
        dtype: "f32".into(),
        fields: vol.planes.iter().map(|(n, _)| n.clone()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + vol.planes.iter().map(|(_, p)| 4 * p.len()).sum::<usize>());
    out.extend_from_slice(VFIELD_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in &vol.planes {
        out.extend(p.iter().flat_map(|v| v.to_le_bytes()));
    }
    out
}

pub fn parse_volume(bytes: &[u8]) -> Result<Volume, CliError> {
    if bytes.len() < 8 || &bytes[..4] != VFIELD_MAGIC {
        return Err(CliError::input("not a vfield file"));
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let body = bytes.get(8..8 + hlen).ok_or_else(|| CliError::input("truncated vfield header"))?;
    let header: VolumeHeader =
        serde_json::from_slice(body).map_err(|e| CliError::input(format!("bad vfield header: {e}")))?;
    if header.dtype != "f32" {
        return Err(CliError::input(format!("unsupported vfield dtype '{}'", header.dtype)));
    }
    let n: usize = header.dims.iter().product();
    if n == 0 {
        return Err(CliError::input(format!("vfield dims {:?} are empty", header.dims)));
    }
    let raw = &bytes[8 + hlen..];
    let need = 4 * n * header.fields.len();
    if raw.len() != need {
        return Err(CliError::input(format!(
            "vfield dims {:?} with {} planes need {need} bytes, found {}",
            header.dims,
            header.fields.len(),
            raw.len()
        )));
    }
    let planes = header
        .fields
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let plane = raw[4 * n * k..4 * n * (k + 1)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            (name.clone(), plane)
        })
        .collect();
    Ok(Volume { dims: header.dims, planes })
}

pub fn read_volume(path: &Path) -> Result<Volume, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    parse_volume(&bytes).map_err(|e| e.context(path))
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<(), CliError> {
    write_bytes(path, &encode_volume(vol))
}

/// Table with a header row; numbers use the shortest exact representation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn encode_table(t: &Table) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::input(format!("csv: {e}"));
    w.write_record(&t.header).map_err(io)?;
    for row in &t.rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::input(format!("csv: {e}")))
}

/// Parses a numeric CSV. A first row that does not parse as numbers is taken
/// as the header; otherwise columns are named `c0, c1, ...`.
pub fn parse_table(bytes: &[u8]) -> Result<Table, CliError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(bytes);
    let mut table = Table::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(format!("csv: {e}")))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if table.header.is_empty() {
                    table.header = (0..row.len()).map(|k| format!("c{k}")).collect();
                }
                if row.len() != table.header.len() {
                    return Err(CliError::input(format!(
                        "csv line {}: {} fields, expected {}",
                        line + 1,
                        row.len(),
                        table.header.len()
                    )));
                }
                table.rows.push(row);
            }
            Err(_) if line == 0 => table.header = rec.iter().map(str::to_string).collect(),
            Err(e) => return Err(CliError::input(format!("csv line {}: {e}", line + 1))),
        }
    }
    Ok(table)
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&bytes).map_err(|e| e.context(path))
}

pub fn write_table(path: &Path, t: &Table) -> Result<(), CliError> {
    write_bytes(path, &encode_table(t)?)
}

/// Reads `x,y` or `x,y,z` points from the first two or three columns.
pub fn points_from_table<const D: usize>(t: &Table) -> Result<Vec<[f64; D]>, CliError> {
    if t.header.len() < D {
        return Err(CliError::input(format!("need {D} coordinate columns, found {}", t.header.len())));
    }
    let cols: Vec<usize> = match ["x", "y", "z"][..D].iter().map(|c| t.column(c)).collect::<Option<Vec<_>>>() {
        Some(c) => c,
        None => (0..D).collect(),
    };
    Ok(t.rows.iter().map(|r| std::array::from_fn(|a| r[cols[a]])).collect())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::input(format!("json: {e}")))?;
    bytes.write_all(b"\n").expect("vec write");
    write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_binary_and_ascii_round_trip() {
        for maxval in [255u16, 65535] {
            let img = Pgm { width: 3, height: 2, maxval, data: vec![0, 1, 7, maxval, 200, 3] };
            assert_eq!(parse_pgm(&encode_pgm(&img)).unwrap(), img);
            assert_eq!(parse_pgm(&encode_pgm_ascii(&img)).unwrap(), img);
        }
    }

    #[test]
    fn pgm_comments_are_skipped() {
        let img = parse_pgm(b"P2\n# made by hand\n2 1 # size\n9\n3 9\n").unwrap();
        assert_eq!((img.width, img.height, img.maxval, img.data.clone()), (2, 1, 9, vec![3, 9]));
    }

    #[test]
    fn malformed_pgm_is_rejected() {
        assert!(parse_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\0").is_err());
        assert!(parse_pgm(b"P2\n1 1\n9\n10\n").is_err());
        assert!(parse_pgm(b"P2\n1").is_err());
    }

    #[test]
    fn probabilities_quantize_to_sixteen_bits() {
        let img = Image { width: 3, height: 1, data: vec![0.0, 0.5, 1.0] };
        assert_eq!(Pgm::from_probabilities(&img).data, vec![0, 32768, 65535]);
    }

    #[test]
    fn volume_round_trip_is_exact() {
        let vol = Volume { dims: [2, 1, 2], planes: vec![("v".into(), vec![0.0, 1.5, -2.25, f32::MIN_POSITIVE])] };
        let bytes = encode_volume(&vol);
        let back = parse_volume(&bytes).unwrap();
        assert_eq!(back, vol);
        assert_eq!(encode_volume(&back), bytes);
    }

    #[test]
    fn volume_size_mismatch_is_rejected() {
        let mut bytes = encode_volume(&Volume { dims: [2, 2, 1], planes: vec![("v".into(), vec![1.0; 4])] });
        bytes.pop();
        assert!(parse_volume(&bytes).is_err());
        assert!(parse_volume(b"VFLD").is_err());
    }

    #[test]
    fn vessel_field_needs_all_planes() {
        let vol = Volume { dims: [1, 1, 1], planes: vec![("v".into(), vec![1.0])] };
        assert!(vol.to_field().is_err());
    }

    #[test]
    fn table_round_trip_is_exact() {
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![0.1, -1e-300]);
        t.push(vec![1.0 / 3.0, 42.0]);
        let back = parse_table(&encode_table(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn headerless_points_are_read() {
        let t = parse_table(b"1,2\n3,4\n").unwrap();
        assert_eq!(points_from_table::<2>(&t).unwrap(), vec![[1.0, 2.0], [3.0, 4.0]]);
        assert!(parse_table(b"x,y\n1,2,3\n").is_err());
    }
}
