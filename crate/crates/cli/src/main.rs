use std::process::ExitCode;

fn main() -> ExitCode {
    let result = wdn_cli::run(std::env::args_os());
    if result.exit_code == 0 {
        println!("{}", result.summary);
        for a in &result.artifacts {
            println!("  wrote {}", a.display());
        }
    } else {
        eprintln!("{}", result.summary);
    }
    ExitCode::from(result.exit_code)
}
