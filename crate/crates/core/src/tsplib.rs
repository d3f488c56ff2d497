//! Reader for the `EUC_2D` subset of the TSPLIB format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tsp::{Instance, Metric};

#[derive(Clone, Debug)]
pub struct TsplibInstance {
    pub name: String,
    pub dimension: usize,
    /// Costs use rounded Euclidean distances on the original coordinates; the
    /// policy features are the coordinates scaled into the unit square.
    pub instance: Instance,
}

/// Published optimal tour lengths for bundled instances.
pub fn known_optimum(name: &str) -> Option<f64> {
    match name {
        "eil51" => Some(426.0),
        "berlin52" => Some(7542.0),
        _ => None,
    }
}

/// Min-max scaling into `[0, 1]²` that keeps the aspect ratio; the longer
/// axis spans the unit interval.
pub fn scale_to_unit_square(coords: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in coords {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let span = if span > 0.0 { span } else { 1.0 };
    coords.iter().map(|p| [(p[0] - lo[0]) / span, (p[1] - lo[1]) / span]).collect()
}

pub fn parse_tsplib(text: &str) -> Result<TsplibInstance> {
    let mut name = String::new();
    let mut dimension = None;
    let mut weight_type = None;
    let mut coords: Vec<(usize, [f64; 2])> = Vec::new();
    let mut in_coords = false;
    let mut saw_section = false;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            break;
        }
        if in_coords {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Parse {
                line: line_no,
                msg: format!("expected `id x y`, got {line:?}"),
            };
            if parts.len() != 3 {
                return Err(bad());
            }
            let id: usize = parts[0].parse().map_err(|_| bad())?;
            let x: f64 = parts[1].parse().map_err(|_| bad())?;
            let y: f64 = parts[2].parse().map_err(|_| bad())?;
            if !(x.is_finite() && y.is_finite()) {
                return Err(bad());
            }
            coords.push((id, [x, y]));
            continue;
        }
        if line == "NODE_COORD_SECTION" {
            in_coords = true;
            saw_section = true;
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected `KEY : value`, got {line:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NAME" => name = value.to_string(),
            "TYPE" if value != "TSP" => {
                return Err(Error::UnsupportedFormat(format!("TYPE {value}")));
            }
            "DIMENSION" => {
                dimension = Some(value.parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad DIMENSION {value:?}"),
                })?)
            }
            "EDGE_WEIGHT_TYPE" => weight_type = Some(value.to_string()),
            _ => {}
        }
    }
    match weight_type.as_deref() {
        Some("EUC_2D") => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("EDGE_WEIGHT_TYPE {other}"))),
        None => return Err(Error::UnsupportedFormat("missing EDGE_WEIGHT_TYPE".into())),
    }
    if !saw_section {
        return Err(Error::UnsupportedFormat("missing NODE_COORD_SECTION".into()));
    }
    let n = coords.len();
    let dimension = dimension.unwrap_or(n);
    if dimension != n {
        return Err(Error::InvalidInput(format!("DIMENSION {dimension} but {n} coordinates")));
    }
    let mut ordered = vec![None; n];
    for (id, p) in coords {
        if id == 0 || id > n || ordered[id - 1].is_some() {
            return Err(Error::InvalidInput(format!("node id {id} out of range or repeated")));
        }
        ordered[id - 1] = Some(p);
    }
    let coords: Vec<[f64; 2]> = ordered.into_iter().map(|p| p.expect("all ids seen")).collect();
    let features = scale_to_unit_square(&coords);
    let instance = Instance::with_metric(coords, Metric::RoundedEuclidean)?.with_features(features)?;
    Ok(TsplibInstance {
        name,
        dimension,
        instance,
    })
}

pub fn read_tsplib(path: impl AsRef<Path>) -> Result<TsplibInstance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsplib(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsp::Tour;

    const SQUARE: &str = "NAME : sq4\nTYPE : TSP\nDIMENSION : 4\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 10 0\n3 10 10\n4 0 10\nEOF\n";

    #[test]
    fn crafted_square() {
        let t = parse_tsplib(SQUARE).unwrap();
        assert_eq!(t.name, "sq4");
        assert_eq!(t.dimension, 4);
        let tour = Tour::identity(&t.instance);
        assert_eq!(tour.length(), 40.0);
        assert_eq!(t.instance.features()[2], [1.0, 1.0]);
    }

    #[test]
    fn aspect_ratio_is_kept() {
        let s = scale_to_unit_square(&[[10.0, 5.0], [30.0, 5.0], [20.0, 15.0]]);
        assert_eq!(s, vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]]);
    }

    #[test]
    fn errors() {
        let geo = SQUARE.replace("EUC_2D", "GEO");
        assert!(matches!(parse_tsplib(&geo), Err(Error::UnsupportedFormat(_))));
        let bad = SQUARE.replace("3 10 10", "3 10 ten");
        match parse_tsplib(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
        let short = SQUARE.replace("DIMENSION : 4", "DIMENSION : 5");
        assert!(parse_tsplib(&short).is_err());
        assert!(parse_tsplib("NAME : x\nEDGE_WEIGHT_TYPE : EUC_2D\n").is_err());
    }

    #[test]
    fn known_optima() {
        assert_eq!(known_optimum("eil51"), Some(426.0));
        assert_eq!(known_optimum("berlin52"), Some(7542.0));
        assert_eq!(known_optimum("kroA100"), None);
    }
}
