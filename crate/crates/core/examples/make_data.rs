//! Regenerates the shipped data files under `data/`:
//!
//! ```text
//! cargo run --example make_data -p ste-core -- data
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use ste_core::bench::{make_dataset, test_function, ExperimentSpec};
use ste_core::{fmt_num, Dataset, RngStream};

/// Days in the two-index series.
const DAYS: usize = 1200;
const NOISE: f64 = 20.0;

/// Level of the driving index on day `t`.
fn driver(t: f64) -> f64 {
    9000.0 + 5.0 * t + 1200.0 * (t / 160.0).sin() + 500.0 * (t / 37.0).cos()
}

/// The response surface over (day, driver level).
fn surface(t: f64, x: f64) -> f64 {
    1500.0 + 0.22 * x + 0.9 * t - 2.0e-4 * t * t + 1.5e-6 * x * t
}

fn write_dataset(path: &Path, header: &str, data: &Dataset) {
    let mut out = String::from(header);
    out.push('\n');
    for (row, y) in data.rows().zip(data.y()) {
        let cells: Vec<String> = row.iter().chain(std::iter::once(y)).map(|&v| fmt_num(v)).collect();
        out += &cells.join(",");
        out.push('\n');
    }
    fs::write(path, out).unwrap();
}

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let dir = Path::new(&dir);
    fs::create_dir_all(dir.join("specs")).unwrap();

    let f = test_function("identity").unwrap();
    let data = make_dataset(f, f.fit_window.0, f.fit_window.1, 500, f.sigma, RngStream::new(2024, 0)).unwrap();
    write_dataset(&dir.join("identity_k500.csv"), "x,y", &data);

    let mut rng = RngStream::new(2024, 1).rng();
    let mut out = String::from("day,driver,response\n");
    for i in 1..=DAYS {
        let t = i as f64;
        let x = (driver(t) + 30.0 * rng.sample::<f64, _>(StandardNormal)).round();
        let y = surface(t, x) + NOISE * rng.sample::<f64, _>(StandardNormal);
        out += &format!("{},{},{}\n", fmt_num(t), fmt_num(x), fmt_num((y * 100.0).round() / 100.0));
    }
    fs::write(dir.join("two_index.csv"), out).unwrap();

    let specs: &[(&str, &[usize])] = &[
        ("identity", &[500]),
        ("cubic", &[25, 100, 500]),
        ("trig-mix", &[25, 100, 500]),
        ("exp2d", &[500]),
        ("poly2d", &[500]),
    ];
    for (id, ks) in specs {
        for &k in *ks {
            let spec = ExperimentSpec::for_function(id, k).unwrap();
            let json = serde_json::to_string_pretty(&spec).unwrap();
            fs::write(dir.join("specs").join(format!("{id}_k{k}.json")), json + "\n").unwrap();
        }
    }
}
