use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use serde_json::json;
use stance_core::backends::ResponseCache;

use crate::Session;

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// Entry count and size on disk.
    Inspect(CacheArgs),
    /// Delete every cached response.
    Clear(CacheArgs),
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    /// Cache directory; defaults to `[cache] dir` from the configuration.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

fn open(session: &Session, args: &CacheArgs) -> Result<ResponseCache> {
    let dir = match &args.dir {
        Some(d) => d.clone(),
        None => session
            .config()?
            .cache_dir
            .clone()
            .context("the configuration has no [cache] section; pass --dir")?,
    };
    ResponseCache::open(&dir).with_context(|| format!("cannot open cache at {}", dir.display()))
}

pub fn run(session: &Session, cmd: CacheCommand, out: &mut dyn Write) -> Result<()> {
    match cmd {
        CacheCommand::Inspect(args) => {
            let cache = open(session, &args)?;
            let stats = cache.stats();
            let value = json!({ "dir": cache.dir(), "entries": stats.entries, "bytes": stats.bytes });
            session.emit(out, &value, || {
                format!("{}\n  entries {}\n  bytes   {}\n", cache.dir().display(), stats.entries, stats.bytes)
            })
        }
        CacheCommand::Clear(args) => {
            let cache = open(session, &args)?;
            let removed = cache.clear().context("cannot clear cache")?;
            let value = json!({ "dir": cache.dir(), "removed": removed });
            session.emit(out, &value, || format!("removed {removed} entries from {}\n", cache.dir().display()))
        }
    }
}
