use std::path::Path;

use histoseg::formats::{
    decode_checkpoint, encode_checkpoint, history_from_csv, history_to_csv, load_checkpoint, load_grid,
    load_profile, load_report, profile_from_json, profile_to_json, save_checkpoint, save_grid, save_profile,
    save_report,
};
use histoseg::Error;
use histoseg_core::evaluation::{Confusion, EvalReport, ImageRecord};
use histoseg_core::patching::plan_patch_grid;
use histoseg_core::{build_model, ModelConfig, StainBasis, StainProfile, TrainingHistory};
use proptest::prelude::*;

fn profile(h: [f64; 3], e: [f64; 3], max: [f64; 2]) -> StainProfile {
    let unit = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|x| x / n)
    };
    StainProfile {
        basis: StainBasis::from_columns(unit(h), unit(e)).unwrap(),
        max_concentration: max,
    }
}

fn tiny_model(seed: u64) -> histoseg_core::Model {
    build_model(&ModelConfig {
        patch_size: 8,
        margin: 2,
        levels: 1,
        base_channels: 2,
        seed,
    })
    .unwrap()
}

/// Keys appear in the text in the given order.
fn assert_key_order(text: &str, keys: &[&str]) {
    let pos: Vec<usize> = keys
        .iter()
        .map(|k| text.find(&format!("\"{k}\"")).unwrap_or_else(|| panic!("missing {k}")))
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{keys:?} in {text}");
}

#[test]
fn profile_json_layout() {
    let p = profile([0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [1.9705, 1.0308]);
    let text = profile_to_json(&p);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_key_order(&text, &["basis", "max_concentration"]);
    assert_eq!(v["basis"].as_array().unwrap().len(), 6);
    // Row-major: row 0 holds the red OD of both stains.
    let row_major = p.basis.to_row_major();
    assert_eq!(row_major[0], p.basis.column(0)[0]);
    assert_eq!(row_major[1], p.basis.column(1)[0]);
    assert_eq!(v["basis"][1].as_f64().unwrap(), row_major[1]);
    // Every number carries 17 significant digits.
    let numbers: Vec<&str> = text
        .split(|c: char| c == '[' || c == ']' || c == ',')
        .filter(|s| s.trim().parse::<f64>().is_ok())
        .collect();
    assert_eq!(numbers.len(), 8);
    for n in numbers {
        let mantissa = n.trim().split('e').next().unwrap();
        assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17, "{n}");
    }
}

#[test]
fn profile_file_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.json");
    let p = profile([0.5626, 0.7201, 0.4062], [0.2159, 0.8012, 0.5581], [1.25, 0.75]);
    save_profile(&p, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = load_profile(&path).unwrap();
    assert_eq!(back, p);
    save_profile(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn malformed_profiles_are_rejected() {
    let p = Path::new("p.json");
    assert!(profile_from_json("{}", p).is_err());
    assert!(profile_from_json(r#"{"basis":[1,0,0,0,0,0],"max_concentration":[1,1]}"#, p).is_err());
    let ok = profile_to_json(&profile([0.6, 0.7, 0.3], [0.2, 0.8, 0.5], [1.0, 1.0]));
    assert!(profile_from_json(&ok.replace("1.0000000000000000e0", "-1.0"), p).is_err());
    assert!(matches!(load_profile(Path::new("/nonexistent/profile.json")), Err(Error::NotFound { .. })));
}

proptest! {
    #[test]
    fn profile_json_is_bit_faithful(
        h in prop::array::uniform3(0.01f64..1.0),
        e in prop::array::uniform3(0.01f64..1.0),
        max in prop::array::uniform2(1e-6f64..10.0),
    ) {
        prop_assume!(StainBasis::from_columns(h, e).is_ok());
        let unit = |v: [f64; 3]| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            v.map(|x| x / n)
        };
        prop_assume!({
            let (a, b) = (unit(h), unit(e));
            (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs() < 0.999
        });
        let p = profile(h, e, max);
        let back = profile_from_json(&profile_to_json(&p), Path::new("p")).unwrap();
        for (x, y) in back.basis.to_row_major().iter().zip(p.basis.to_row_major()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in back.max_concentration.iter().zip(p.max_concentration) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = tiny_model(5);
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());
}

#[test]
fn checkpoint_layout() {
    let model = tiny_model(1);
    let bytes = encode_checkpoint(&model);
    let split = bytes.iter().position(|&b| b == b'\n').unwrap();
    let header: serde_json::Value = serde_json::from_slice(&bytes[..split]).unwrap();
    let text = std::str::from_utf8(&bytes[..split]).unwrap();
    assert_key_order(text, &["format", "version", "config", "layers", "parameter_count"]);
    assert_eq!(header["parameter_count"], model.parameter_count());
    assert_eq!(header["layers"][0]["name"], "enc0.conv1");
    assert_eq!(header["layers"][0]["weight"], serde_json::json!([3, 3, 6, 2]));
    assert_eq!(bytes.len() - split - 1, 8 * model.parameter_count());
    // First stored value is the first weight, little-endian.
    let first = f64::from_le_bytes(bytes[split + 1..split + 9].try_into().unwrap());
    assert_eq!(first, model.parameters()[0].data()[0]);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let p = Path::new("m.ckpt");
    let good = encode_checkpoint(&tiny_model(2));
    assert!(decode_checkpoint(&good[..good.len() - 1], p).is_err());
    let mut extra = good.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra, p).is_err());
    assert!(decode_checkpoint(b"no header", p).is_err());

    let split = good.iter().position(|&b| b == b'\n').unwrap();
    let mut nan = good.clone();
    nan[split + 1..split + 9].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(decode_checkpoint(&nan, p).is_err());

    let header = std::str::from_utf8(&good[..split]).unwrap();
    let wrong_version = header.replace("\"version\":1", "\"version\":2");
    let mut bytes = wrong_version.into_bytes();
    bytes.extend_from_slice(&good[split..]);
    assert!(matches!(decode_checkpoint(&bytes, p), Err(Error::Format { .. })));
}

#[test]
fn history_csv() {
    let h = TrainingHistory {
        mean_loss: vec![0.5, 0.25, 0.1 + 0.2],
        mean_dice: vec![0.1, 0.6, 0.95],
    };
    let bytes = history_to_csv(&h);
    let text = std::str::from_utf8(&bytes).unwrap();
    assert!(text.starts_with("epoch,mean_loss,mean_dice\n1,0.5,0.1\n2,0.25,0.6\n"));
    assert_eq!(history_from_csv(&bytes, Path::new("h")).unwrap(), h);

    let empty = history_to_csv(&TrainingHistory::default());
    assert_eq!(empty, b"epoch,mean_loss,mean_dice\n");
    assert_eq!(history_from_csv(&empty, Path::new("h")).unwrap().epochs(), 0);
    assert!(history_from_csv(b"epoch,mean_loss,mean_dice\n2,0.5,0.1\n", Path::new("h")).is_err());
}

#[test]
fn report_json_layout() {
    let c = Confusion {
        tp: 3,
        fp: 1,
        fn_: 2,
        tn: 10,
    };
    let report = EvalReport::from_records(vec![ImageRecord::new("a", c), ImageRecord::new("b", Confusion::default())])
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    save_report(&report, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_key_order(&text, &["images", "id", "dice", "tp", "fp", "fn", "tn", "mean_dice"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["images"][0]["dice"], 6.0 / 9.0);
    assert_eq!(load_report(&path).unwrap(), report);
}

#[test]
fn grid_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.json");
    let grid = plan_patch_grid(1000, 1000, 256, 64).unwrap();
    save_grid(&grid, &path).unwrap();
    assert_eq!(load_grid(&path).unwrap(), grid);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_key_order(&text, &["patch_size", "margin", "image_height", "image_width", "origins"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["origins"][1], serde_json::json!([0, 256]));
}
