use std::collections::HashMap;
use std::fs;

use fetree::simlab::{generate, SimSpec};
use fetree::{fit_model, load_csv, CovariateKind, CsvColumns, FitConfig, FittedModel, ModelKind};

fn columns(covs: &[&str]) -> CsvColumns {
    CsvColumns {
        outcome: "y".into(),
        unit: "unit".into(),
        covariates: covs.iter().map(|s| s.to_string()).collect(),
        kinds: HashMap::new(),
    }
}

#[test]
fn written_data_reloads_and_refits_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (d, _) = generate(&SimSpec::new(2, 3).unwrap(), 4, 0).unwrap();
    let path = dir.path().join("d.csv");
    d.write_csv(fs::File::create(&path).unwrap()).unwrap();
    let names = d.covariate_names();
    let cols = columns(&names.iter().map(String::as_str).collect::<Vec<_>>());
    let e = load_csv(&path, &cols).unwrap();
    assert_eq!(d.y(), e.y());
    assert_eq!(d.unit_labels(), e.unit_labels());

    let cfg = FitConfig { model: ModelKind::Ttsc, max_splits: 6, folds: 5, ..FitConfig::default() };
    let a = fit_model(&d, &cfg).unwrap().to_json().unwrap();
    let b = fit_model(&e, &cfg).unwrap().to_json().unwrap();
    assert_eq!(a, b);

    let model_path = dir.path().join("m.json");
    fs::write(&model_path, &a).unwrap();
    let back = FittedModel::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), a);
}

#[test]
fn load_errors_name_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "unit,y,x\nA,1,0.5\nB,2,NA\n").unwrap();
    let msg = load_csv(&path, &columns(&["x"])).unwrap_err().to_string();
    assert!(msg.contains('2') && msg.contains('x'), "{msg}");

    let missing = load_csv(dir.path().join("none.csv"), &columns(&["x"])).unwrap_err().to_string();
    assert!(missing.contains("none.csv"), "{missing}");
}

#[test]
fn string_units_and_kind_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.csv");
    fs::write(&path, "unit,y,a,b\nnorth,1,0,3\nsouth,2,1,4\nnorth,3,1,5\n").unwrap();
    let mut cols = columns(&["a", "b"]);
    cols.kinds.insert("a".into(), CovariateKind::Continuous);
    cols.kinds.insert("b".into(), CovariateKind::Ordinal);
    let d = load_csv(&path, &cols).unwrap();
    assert_eq!(d.unit_labels(), ["north", "south"]);
    assert_eq!(d.unit_sizes(), vec![2, 1]);
    assert_eq!(d.meta()[0].kind, CovariateKind::Continuous);
    assert_eq!(d.meta()[1].kind, CovariateKind::Ordinal);

    cols.kinds.insert("b".into(), CovariateKind::Binary);
    assert!(load_csv(&path, &cols).is_err());
}
