//! Command-line entry point for training, evaluating, and running the
//! polythene classifier, plus augmentation previews and the numeric
//! self-check suite.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input/config error,
//! 3 checkpoint error, 4 I/O error.

mod commands;

use std::env;

const USAGE: &str = "\
polyth - three-class polythene classifier

USAGE:
  polyth train    --data DIR --out DIR [--config FILE] [--seed N] [--restarts N]
                  [--lambda X] [--epochs N] [--batch-size N] [--steps N]
                  [--lr X] [--lr-decay X] [--patience N] [--no-augment]
                  [--set KEY=VALUE]...
  polyth eval     --data DIR --checkpoint FILE [--split train|val|test]
                  [--lambda X] [--batch-size N] [--out FILE]
  polyth classify --checkpoint FILE --image FILE [--threshold T]
  polyth augment  --image FILE --out DIR --count N --seed S
  polyth verify   [--perturb CHECK]

Config files and --set accept key=value pairs named after the training
fields (batch_size, steps_per_epoch, max_epochs, lr0, lr_decay_factor,
lambda, beta1, beta2, epsilon, patience, min_delta, restarts, seed, augment)
and the model fields (input_size, num_classes, stem_channels,
block_channels, use_residual, head_widths, drop_prob). Flags override file
values. All randomness flows from the seed; no command reads the clock.

EXIT CODES:
  0 success   1 verification failure   2 input/config error
  3 checkpoint error                   4 I/O error
";

fn main() {
    let args: Vec<String> = env::args().skip(1).collect();
    let code = match args.first().map(|s| s.as_str()) {
        Some("train") => commands::cmd_train(&args[1..]),
        Some("eval") => commands::cmd_eval(&args[1..]),
        Some("classify") => commands::cmd_classify(&args[1..]),
        Some("augment") => commands::cmd_augment(&args[1..]),
        Some("verify") => commands::cmd_verify(&args[1..]),
        Some("help") | Some("--help") | Some("-h") => {
            print!("{USAGE}");
            0
        }
        Some(other) => {
            eprintln!("unknown command {other:?}\n\n{USAGE}");
            2
        }
        None => {
            eprint!("{USAGE}");
            2
        }
    };
    std::process::exit(code);
}
