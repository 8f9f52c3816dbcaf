use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::schema::FeatureSchema;
use super::GeoError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// A census tract: opaque id, centroid and raw indicator values in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tract {
    pub id: String,
    pub centroid: LatLon,
    pub features: Vec<f64>,
    /// Original polygon geometry, passed through for map display only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Value>,
}

impl Tract {
    pub fn new(id: impl Into<String>, centroid: LatLon, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            centroid,
            features,
            geometry: None,
        }
    }
}

const ID_COLUMNS: &[&str] = &["id", "tract_id"];
const LAT_COLUMNS: &[&str] = &["lat", "latitude"];
const LON_COLUMNS: &[&str] = &["lon", "lng", "longitude"];

/// Loads tracts from a delimited table (`.csv`, `.tsv`, `.txt`) or a GeoJSON
/// FeatureCollection (`.geojson`, `.json`).
///
/// Row indices in errors count data rows from 0, excluding the header.
pub fn load_tracts(path: &Path, schema: &FeatureSchema) -> Result<Vec<Tract>, GeoError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let tracts = match ext.as_str() {
        "geojson" | "json" => load_geojson(path, schema)?,
        _ => load_table(path, schema)?,
    };
    validate_tracts(&tracts, schema)?;
    Ok(tracts)
}

/// Checks ids, coordinates, feature lengths and sign constraints.
pub fn validate_tracts(tracts: &[Tract], schema: &FeatureSchema) -> Result<(), GeoError> {
    let mut ids = BTreeSet::new();
    for (row, t) in tracts.iter().enumerate() {
        if !ids.insert(t.id.as_str()) {
            return Err(GeoError::DuplicateId(t.id.clone()));
        }
        if t.features.len() != schema.len() {
            return Err(GeoError::SchemaMismatch {
                expected: schema.len(),
                found: t.features.len(),
            });
        }
        check_coordinate(row, "lat", t.centroid.lat, 90.0)?;
        check_coordinate(row, "lon", t.centroid.lon, 180.0)?;
        for (v, ind) in t.features.iter().zip(&schema.indicators) {
            if !v.is_finite() {
                return Err(GeoError::NonFiniteValue {
                    row,
                    column: ind.name.clone(),
                });
            }
            if ind.nonnegative && *v < 0.0 {
                return Err(GeoError::NegativeValue {
                    row,
                    column: ind.name.clone(),
                    value: *v,
                });
            }
        }
    }
    Ok(())
}

fn check_coordinate(row: usize, column: &str, v: f64, limit: f64) -> Result<(), GeoError> {
    if !v.is_finite() {
        return Err(GeoError::NonFiniteValue {
            row,
            column: column.into(),
        });
    }
    if v.abs() > limit {
        return Err(GeoError::OutOfRange {
            row,
            column: column.into(),
            value: v,
        });
    }
    Ok(())
}

fn sniff_delimiter(path: &Path) -> Result<u8, GeoError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
    let header = text.lines().next().unwrap_or("");
    Ok((*b"\t;,")
        .into_iter()
        .max_by_key(|d| header.bytes().filter(|b| b == d).count())
        .unwrap_or(b','))
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
}

fn parse_cell(row: usize, column: &str, cell: &str) -> Result<f64, GeoError> {
    if cell.is_empty() {
        return Err(GeoError::MissingValue {
            row,
            column: column.into(),
        });
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(GeoError::NonFiniteValue {
            row,
            column: column.into(),
        }),
    }
}

fn load_table(path: &Path, schema: &FeatureSchema) -> Result<Vec<Tract>, GeoError> {
    let delimiter = sniff_delimiter(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| GeoError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| GeoError::csv(path, e))?.clone();
    let id_col = find_column(&headers, ID_COLUMNS).ok_or(GeoError::MissingColumn("id".into()))?;
    let lat_col = find_column(&headers, LAT_COLUMNS).ok_or(GeoError::MissingColumn("lat".into()))?;
    let lon_col = find_column(&headers, LON_COLUMNS).ok_or(GeoError::MissingColumn("lon".into()))?;
    let feature_cols = schema
        .names()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| GeoError::MissingColumn(name.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut tracts = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| GeoError::csv(path, e))?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let id = cell(id_col).to_string();
        if id.is_empty() {
            return Err(GeoError::MissingValue {
                row,
                column: "id".into(),
            });
        }
        let lat = parse_cell(row, "lat", cell(lat_col))?;
        let lon = parse_cell(row, "lon", cell(lon_col))?;
        let features = feature_cols
            .iter()
            .zip(schema.names())
            .map(|(&c, name)| parse_cell(row, name, cell(c)))
            .collect::<Result<Vec<_>, _>>()?;
        tracts.push(Tract::new(id, LatLon::new(lat, lon), features));
    }
    Ok(tracts)
}

fn load_geojson(path: &Path, schema: &FeatureSchema) -> Result<Vec<Tract>, GeoError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| GeoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let parse_err = |message: &str| GeoError::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(parse_err("expected a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("missing features array"))?;

    let mut tracts = Vec::with_capacity(features.len());
    for (row, feature) in features.iter().enumerate() {
        let props = feature
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| parse_err("feature without properties"))?;
        let id = ID_COLUMNS
            .iter()
            .find_map(|k| props.get(*k))
            .or_else(|| feature.get("id"))
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .ok_or(GeoError::MissingColumn("id".into()))?;
        let geometry = feature.get("geometry").filter(|g| !g.is_null());
        let centroid = match geometry {
            Some(g) => geometry_centroid(g).ok_or_else(|| parse_err("unsupported geometry"))?,
            None => {
                let lat = props
                    .get("lat")
                    .and_then(Value::as_f64)
                    .ok_or(GeoError::MissingColumn("lat".into()))?;
                let lon = props
                    .get("lon")
                    .and_then(Value::as_f64)
                    .ok_or(GeoError::MissingColumn("lon".into()))?;
                LatLon::new(lat, lon)
            }
        };
        let mut values = Vec::with_capacity(schema.len());
        for name in schema.names() {
            let v = props
                .get(name)
                .ok_or_else(|| GeoError::MissingColumn(name.to_string()))?;
            let v = match v {
                Value::Null => {
                    return Err(GeoError::MissingValue {
                        row,
                        column: name.into(),
                    })
                }
                Value::Bool(b) => f64::from(u8::from(*b)),
                other => other.as_f64().ok_or_else(|| GeoError::NonFiniteValue {
                    row,
                    column: name.into(),
                })?,
            };
            values.push(v);
        }
        let mut tract = Tract::new(id, centroid, values);
        if matches!(
            geometry.and_then(|g| g.get("type")).and_then(Value::as_str),
            Some("Polygon" | "MultiPolygon")
        ) {
            tract.geometry = geometry.cloned();
        }
        tracts.push(tract);
    }
    Ok(tracts)
}

fn ring_points(ring: &Value) -> Option<Vec<(f64, f64)>> {
    ring.as_array()?
        .iter()
        .map(|p| {
            let p = p.as_array()?;
            Some((p.first()?.as_f64()?, p.get(1)?.as_f64()?))
        })
        .collect()
}

/// Signed area and area-weighted centroid (x = lon, y = lat) of a closed ring.
fn ring_moments(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let cross = x0 * y1 - x1 * y0;
        a += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    (a / 2.0, cx / 6.0, cy / 6.0)
}

/// Area, area-weighted x and y sums, and the outer ring's vertices.
type Moments = (f64, f64, f64, Vec<(f64, f64)>);

/// Planar centroid of the polygon in degree space (holes subtract), falling
/// back to the vertex mean for degenerate rings.
fn polygon_moments(rings: &[Value]) -> Option<Moments> {
    let mut area = 0.0;
    let (mut mx, mut my) = (0.0, 0.0);
    let mut vertices = Vec::new();
    for (k, ring) in rings.iter().enumerate() {
        let pts = ring_points(ring)?;
        let (a, cx, cy) = ring_moments(&pts);
        // orient outer ring positive, holes negative
        let sign = if (k == 0) == (a >= 0.0) { 1.0 } else { -1.0 };
        area += sign * a;
        mx += sign * cx;
        my += sign * cy;
        if k == 0 {
            vertices = pts;
        }
    }
    Some((area, mx, my, vertices))
}

fn geometry_centroid(geometry: &Value) -> Option<LatLon> {
    let coords = geometry.get("coordinates")?;
    let polygons: Vec<&Vec<Value>> = match geometry.get("type")?.as_str()? {
        "Point" => {
            let p = coords.as_array()?;
            return Some(LatLon::new(p.get(1)?.as_f64()?, p.first()?.as_f64()?));
        }
        "Polygon" => vec![coords.as_array()?],
        "MultiPolygon" => coords
            .as_array()?
            .iter()
            .map(Value::as_array)
            .collect::<Option<Vec<_>>>()?,
        _ => return None,
    };
    let (mut area, mut mx, mut my) = (0.0, 0.0, 0.0);
    let mut all_vertices = Vec::new();
    for rings in polygons {
        let (a, x, y, v) = polygon_moments(rings)?;
        area += a;
        mx += x;
        my += y;
        all_vertices.extend(v);
    }
    if area.abs() > 1e-18 {
        Some(LatLon::new(my / area, mx / area))
    } else if !all_vertices.is_empty() {
        let n = all_vertices.len() as f64;
        let (sx, sy) = all_vertices
            .iter()
            .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
        Some(LatLon::new(sy / n, sx / n))
    } else {
        None
    }
}
