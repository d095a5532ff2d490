//! Serves the fixture model (or a fixed logit vector) over the external
//! backend line protocol. Used to exercise the process adapter end to end.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use infersentry::backends::{generate_fixture_model, FixtureModelSpec, InputVector};

#[derive(Parser, Debug)]
#[command(name = "infersentry-fixture-server")]
struct Args {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Answer every request with these logits instead of running the model.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    fixed_logits: Option<Vec<f64>>,
    /// Exit with status 3 upon receiving request number N (0-based) without answering it.
    #[arg(long)]
    exit_after: Option<u64>,
    /// Echo a wrong id in response to request number N.
    #[arg(long)]
    bad_id_at: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut lines = stdin.lock().lines();

    let f_in = match lines.next() {
        Some(Ok(line)) => match serde_json::from_str::<Value>(&line) {
            Ok(v) => match v["hello"]["f_in"].as_u64() {
                Some(f) => f as usize,
                None => return fail("handshake missing hello.f_in"),
            },
            Err(e) => return fail(&format!("bad handshake: {e}")),
        },
        _ => return fail("no handshake"),
    };
    let model = match &args.fixed_logits {
        Some(_) => None,
        None => Some(generate_fixture_model(FixtureModelSpec {
            seed: args.seed,
            f_in,
            hidden: args.hidden,
            classes: args.classes,
        })),
    };
    let classes = args.fixed_logits.as_ref().map_or(args.classes, Vec::len);
    if reply(&mut stdout, &json!({"ready": {"classes": classes}})).is_err() {
        return ExitCode::FAILURE;
    }

    for (served, line) in (0u64..).zip(lines) {
        let Ok(line) = line else { break };
        if args.exit_after == Some(served) {
            return ExitCode::from(3);
        }
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => return fail(&format!("bad request: {e}")),
        };
        let Some(id) = req["id"].as_u64() else {
            return fail("request without id");
        };
        let logits = match (&args.fixed_logits, &model) {
            (Some(fixed), _) => fixed.clone(),
            (None, Some(model)) => {
                let values: Vec<f64> = req["input"]
                    .as_array()
                    .map(|a| a.iter().filter_map(Value::as_f64).collect())
                    .unwrap_or_default();
                match model.infer_logits(&InputVector {
                    input_index: 0,
                    values,
                }) {
                    Ok(l) => l,
                    Err(e) => return fail(&e.to_string()),
                }
            }
            (None, None) => unreachable!(),
        };
        let echoed = if args.bad_id_at == Some(served) { id + 1000 } else { id };
        if reply(&mut stdout, &json!({"id": echoed, "logits": logits})).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}

fn reply(out: &mut impl Write, v: &Value) -> io::Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    out.write_all(b"\n")?;
    out.flush()
}

fn fail(msg: &str) -> ExitCode {
    eprintln!("infersentry-fixture-server: {msg}");
    ExitCode::from(2)
}
