//! CSV and JSON report emission.
//!
//! Every CSV starts with a `# schema=<name>/<version>` line followed by the
//! header. Numbers use Rust's shortest round-trip formatting so reruns are
//! byte-identical.

use faultbench_core::faults::FaultSweep;
use faultbench_core::metrics::MetricsReport;
use faultbench_core::training::TrainingRecord;
use serde::Serialize;

use crate::Error;

pub struct Schema {
    pub name: &'static str,
    pub version: u32,
    pub header: &'static [&'static str],
}

pub const RECORD: Schema = Schema {
    name: "training_record",
    version: 1,
    header: &["epoch", "train_acc", "test_acc", "train_loss", "test_loss", "eps_dp"],
};

pub const SWEEP_TRIALS: Schema =
    Schema { name: "fault_sweep_trials", version: 1, header: &["fraction", "trial", "accuracy"] };

pub const SWEEP_SUMMARY: Schema =
    Schema { name: "fault_sweep_summary", version: 1, header: &["fraction", "mean", "sd"] };

pub const ATTACK: Schema = Schema {
    name: "attack_eval",
    version: 1,
    header: &["eps", "steps", "step_size", "clean_acc", "robust_acc"],
};

/// Builds one schema-tagged CSV document.
pub struct CsvDoc {
    out: csv::Writer<Vec<u8>>,
    width: usize,
}

impl CsvDoc {
    pub fn new(schema: &Schema) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(format!("# schema={}/{}\n", schema.name, schema.version).as_bytes());
        let mut out = csv::Writer::from_writer(buf);
        out.write_record(schema.header).expect("writing to memory");
        Self { out, width: schema.header.len() }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let fields: Vec<S> = fields.into_iter().collect();
        assert_eq!(fields.len(), self.width, "row width does not match the schema");
        self.out.write_record(fields).expect("writing to memory");
    }

    pub fn finish(self) -> String {
        let bytes = self.out.into_inner().expect("flushing to memory");
        String::from_utf8(bytes).expect("CSV fields are UTF-8")
    }
}

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn record_csv(record: &TrainingRecord) -> String {
    let mut doc = CsvDoc::new(&RECORD);
    for e in &record.epochs {
        doc.row([
            (e.epoch + 1).to_string(),
            num(e.train_acc),
            num(e.test_acc),
            num(e.train_loss),
            num(e.test_loss),
            e.privacy.map_or(String::new(), |p| num(p.eps_dp)),
        ]);
    }
    doc.finish()
}

pub fn sweep_csvs(sweep: &FaultSweep) -> (String, String) {
    let mut trials = CsvDoc::new(&SWEEP_TRIALS);
    let mut summary = CsvDoc::new(&SWEEP_SUMMARY);
    for row in &sweep.rows {
        for (t, a) in row.accuracies.iter().enumerate() {
            trials.row([num(row.fraction), t.to_string(), num(*a)]);
        }
        summary.row([num(row.fraction), num(row.mean), num(row.sd)]);
    }
    (trials.finish(), summary.finish())
}

/// JSON body of `evaluate` and of each run's `report.json`.
#[derive(Debug, Serialize)]
pub struct ReportJson<'a> {
    pub tag: &'a str,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gen_err: f64,
    pub param_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_dp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_dp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_holds: Option<bool>,
}

pub fn report_json(r: &MetricsReport) -> Result<String, Error> {
    let p = r.privacy.as_ref();
    let body = ReportJson {
        tag: &r.tag,
        train_acc: r.train_acc,
        test_acc: r.test_acc,
        gen_err: r.gen_err,
        param_std: r.param_std,
        eps_dp: p.map(|p| p.eps_dp),
        delta_dp: p.map(|p| p.delta_dp),
        bound: p.map(|p| p.bound),
        bound_holds: p.map(|p| p.bound_holds),
    };
    Ok(serde_json::to_string_pretty(&body)? + "\n")
}

#[derive(Debug, Serialize)]
pub struct AccountJson {
    pub eps: f64,
    pub delta: f64,
    pub alpha_star: f64,
    pub bound: f64,
    pub steps: u64,
    pub sigma: f64,
    pub subsampling_amplification: bool,
}
