//! Print the built-in default configuration as JSON; used to regenerate
//! configs/default.json.

fn main() {
    let cfg = isopsim_core::config::Config::default();
    println!("{}", cfg.to_json_string().unwrap());
}
