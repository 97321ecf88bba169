use std::io::Write;

use chrono::{SecondsFormat, Utc};
use log::LevelFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum LogFormat {
    #[default]
    Text,
    /// One JSON object per line: `{ts, level, target, msg}`.
    Json,
}

pub fn init(format: LogFormat, level: LevelFilter) {
    let mut builder = env_logger::Builder::new();
    builder.filter_level(level).target(env_logger::Target::Stderr);
    match format {
        LogFormat::Text => {
            builder.format(|buf, r| writeln!(buf, "[{}] {}", r.level().as_str().to_ascii_lowercase(), r.args()));
        }
        LogFormat::Json => {
            builder.format(|buf, r| {
                let line = serde_json::json!({
                    "ts": Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
                    "level": r.level().as_str(),
                    "target": r.target(),
                    "msg": r.args().to_string(),
                });
                writeln!(buf, "{line}")
            });
        }
    }
    let _ = builder.try_init();
}
