//! Recomputes the Overall column of the bundled reference table from its six
//! metric columns.

use latent_deid::evaluation::{ColumnMeans, MetricsReport};

const REFERENCE: &str = include_str!("../data/reference_scores.csv");

fn main() -> anyhow::Result<()> {
    let mut reader = csv::Reader::from_reader(REFERENCE.as_bytes());
    println!(
        "{:<22} {:<10} {:>9} {:>10} {:>8}",
        "method", "dataset", "published", "recomputed", "hm_attr"
    );
    for rec in reader.records() {
        let rec = rec?;
        let v: Vec<f64> = (2..9).map(|i| rec[i].parse()).collect::<Result<_, _>>()?;
        let report = MetricsReport::from_means(ColumnMeans::from_array([v[0], v[1], v[2], v[3], v[4], v[5]]))?;
        println!(
            "{:<22} {:<10} {:>9.3} {:>10.4} {:>8.4}",
            &rec[0], &rec[1], v[6], report.overall, report.hm_attr
        );
    }
    Ok(())
}
