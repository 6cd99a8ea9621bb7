use std::process::Command;

fn main() {
    let commit = Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into());
    println!("cargo:rustc-env=VASCNAV_COMMIT={commit}");
    println!("cargo:rustc-env=VASCNAV_TARGET={}", std::env::var("TARGET").unwrap_or_default());
    println!("cargo:rustc-env=VASCNAV_PROFILE={}", std::env::var("PROFILE").unwrap_or_default());
    println!("cargo:rerun-if-changed=../../.git/HEAD");
}
