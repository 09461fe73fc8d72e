fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (report, code) = agepatch::cli::dispatch(&args);
    for message in &report.messages {
        eprintln!("{}", message.trim_end());
    }
    if report.status == agepatch::cli::Status::Ok && !report.outputs.is_empty() {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    }
    std::process::exit(code);
}
