use std::path::Path;

use super::GridModel;
use crate::error::Result;

/// Reads and validates a grid file.
pub fn load_grid(path: impl AsRef<Path>) -> Result<GridModel> {
    let text = std::fs::read_to_string(path)?;
    let grid: GridModel = serde_json::from_str(&text)?;
    Ok(grid)
}

/// Deterministic JSON: keys sorted, floats in shortest round-trip form.
pub fn to_json_string(grid: &GridModel) -> String {
    // serde_json's map is ordered by key unless `preserve_order` is on
    let value = serde_json::to_value(grid).expect("grid serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

pub fn save_grid(grid: &GridModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json_string(grid))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cases;

    #[test]
    fn round_trip_is_exact() {
        for grid in [cases::toy2(), cases::hybrid4(), cases::case33_hybrid()] {
            let text = to_json_string(&grid);
            let back: GridModel = serde_json::from_str(&text).unwrap();
            assert_eq!(back, grid);
            assert_eq!(to_json_string(&back), text);
        }
    }

    #[test]
    fn malformed_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"nodes\": [").unwrap();
        let err = load_grid(&p).unwrap_err();
        assert!(matches!(err, crate::Error::Parse(_)));
    }

    #[test]
    fn validation_errors_surface_through_serde() {
        let mut value = serde_json::to_value(cases::hybrid4()).unwrap();
        // make the aux node DC
        let nodes = value["nodes"].as_array_mut().unwrap();
        for n in nodes.iter_mut() {
            if n["id"] == 2 {
                n["kind"] = "dc".into();
            }
        }
        let err = serde_json::from_value::<GridModel>(value).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");
    }
}
