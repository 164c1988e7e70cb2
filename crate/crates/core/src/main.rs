use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cwd = match std::env::current_dir() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("dsi: cannot determine the current directory: {e}");
            return ExitCode::from(dsi::cli::CONFIG_ERROR as u8);
        }
    };
    ExitCode::from(dsi::cli::invoke(&args, &cwd) as u8)
}
