use crate::error::{Error, Result};
use crate::train::eval::MetricsReport;

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Side-by-side CSV of several runs: one row per terrain RMSE, then the
/// average RMSE and PCC; a mean and a std column per run.
pub fn merge_reports(runs: &[(String, MetricsReport)]) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::Contract("no reports to merge".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric".to_string()];
    for (label, _) in runs {
        header.push(format!("{label}_mean"));
        header.push(format!("{label}_std"));
    }
    w.write_record(&header)?;
    let n_classes = runs[0].1.classes.len();
    for i in 0..n_classes {
        let mut row = vec![format!("{}_RMSE", runs[0].1.classes[i].group)];
        for (_, r) in runs {
            let c = r.classes.get(i).ok_or_else(|| Error::Contract("reports disagree on classes".into()))?;
            row.push(fmt(c.rmse_mean));
            row.push(fmt(c.rmse_std));
        }
        w.write_record(&row)?;
    }
    let mut avg = vec!["Avg_RMSE".to_string()];
    let mut pcc = vec!["PCC".to_string()];
    for (_, r) in runs {
        avg.extend([fmt(r.overall.rmse_mean), fmt(r.overall.rmse_std)]);
        pcc.extend([fmt(r.overall.pcc_mean), fmt(r.overall.pcc_std)]);
    }
    w.write_record(&avg)?;
    w.write_record(&pcc)?;
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
