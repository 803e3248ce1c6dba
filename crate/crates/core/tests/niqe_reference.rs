use std::path::PathBuf;

use idblend::eval::niqe::{niqe_gray, NiqeModel};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn fixture(h: usize, w: usize, noisy: bool) -> Vec<f64> {
    let mut v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut g = 128.0 + 60.0 * (0.07 * xf + 0.05 * yf).sin() + 0.2 * (((x * 7919 + y * 104729) % 256) as f64 - 128.0);
            if noisy {
                g += ((x * 31337 + y * 7331) % 97) as f64 - 48.0;
            }
            v.push(g);
        }
    }
    v
}

#[test]
fn matches_reference_implementation() {
    let model = match NiqeModel::load(data_dir().join("niqe_pristine_params.json")) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("skipped: {e}");
            return;
        }
    };
    let want: serde_json::Value = serde_json::from_str(include_str!("fixtures/niqe_reference.json")).unwrap();
    let (h, w) = (want["height"].as_u64().unwrap() as usize, want["width"].as_u64().unwrap() as usize);
    for (name, noisy) in [("clean", false), ("noisy", true)] {
        let got = niqe_gray(&fixture(h, w, noisy), h, w, &model).unwrap();
        let expect = want[name].as_f64().unwrap();
        eprintln!("{name}: {got} vs {expect}");
        // the reference runs in single precision
        assert!((got - expect).abs() <= 1e-3 * expect, "{name}: {got} vs {expect}");
    }
}
