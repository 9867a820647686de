use clap::CommandFactory;

use crate::config::RunConfig;
use crate::Cli;

fn walk(cmd: &mut clap::Command, path: &str, out: &mut String) {
    let name = if path.is_empty() { cmd.get_name().to_string() } else { format!("{path} {}", cmd.get_name()) };
    let help = cmd.render_long_help().to_string();
    out.push_str(&format!("## `{name}`\n\n```text\n{}\n```\n\n", help.trim_end()));
    let mut subs: Vec<clap::Command> = cmd.get_subcommands().cloned().collect();
    for sub in &mut subs {
        if sub.get_name() != "help" {
            walk(sub, &name, out);
        }
    }
}

/// Markdown page listing every command with its flags, followed by the
/// configuration schema with default values.
pub fn render() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let mut out = String::from("# vlseg command reference\n\n");
    out.push_str("Generated by `vlseg config reference`.\n\n");
    out.push_str(
        "Exit codes: 0 success, 2 usage or invalid configuration, 3 missing artifact, \
         4 data error, 5 numeric failure.\n\n",
    );
    walk(&mut cmd, "", &mut out);
    out.push_str("## Configuration file\n\n");
    out.push_str(
        "JSON object; every key is optional and unknown keys are rejected. \
         Flags given on the command line take precedence. Defaults:\n\n",
    );
    let defaults = serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes");
    out.push_str(&format!("```json\n{defaults}\n```\n"));
    out
}
