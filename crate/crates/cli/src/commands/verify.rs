use anagram_core::tensor::Dims;
use anagram_core::verify::{verify_view, ViewReport};
use anagram_core::view::{BuildOptions, ViewSpec};

use crate::error::CliError;
use crate::VerifyArgs;

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn render(r: &ViewReport) -> String {
    let ortho = match r.orthogonality_residual {
        Some(res) => format!("residual={res:e}"),
        None => "matrix too large to form".into(),
    };
    [
        format!("view: {}", r.spec),
        format!("admissibility: {}", r.admissibility.as_str()),
        format!(
            "round_trip: {} (bit_exact={}, max_abs_error={:e})",
            pass(r.round_trip_pass),
            r.round_trip.bit_exact,
            r.round_trip.max_abs_error
        ),
        format!("linearity: {} (max_abs_error={:e})", pass(r.linearity_pass), r.linearity_error),
        format!("orthogonality: {} ({ortho})", pass(r.orthogonality_pass)),
        format!("noise: {} (verdict={})", pass(r.noise.verdict.is_pass()), r.noise.verdict.as_str()),
        r.noise.to_text(),
        format!("overall: {}", pass(r.all_pass())),
    ]
    .join("\n")
}

pub fn report(args: &VerifyArgs) -> Result<ViewReport, CliError> {
    let dims = Dims::parse(&args.dims).ok_or_else(|| CliError::Config(format!("invalid dims `{}`", args.dims)))?;
    let opts = BuildOptions { dense_cap: args.dense_cap, ..BuildOptions::default() };
    let view = args.spec.parse::<ViewSpec>().and_then(|s| s.build(dims, &opts)).map_err(CliError::config)?;
    verify_view(&view, &args.spec, args.trials, args.samples, args.seed, args.dense_cap).map_err(CliError::config)
}

pub fn run(args: &VerifyArgs) -> Result<(), CliError> {
    let r = report(args)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
    } else {
        println!("{}", render(&r));
    }
    if r.all_pass() {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(format!("`{}` did not pass every check", r.spec)))
    }
}
