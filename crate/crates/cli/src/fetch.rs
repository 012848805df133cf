//! Opt-in download and caching of the public datasets.

use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use muscle_core::io::{parse_portfolio_returns, parse_wind_data, write_table_csv, Table};
use sha2::{Digest, Sha256};

pub const CACHE_ENV: &str = "MUSCLE_CACHE_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Dataset {
    WindSpeed,
    IndustryPortfolios,
}

/// Daily returns are restricted to this date window.
pub const PORTFOLIO_FROM: u32 = 19700101;
pub const PORTFOLIO_TO: u32 = 20191231;

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Self::WindSpeed => "wind-speed",
            Self::IndustryPortfolios => "industry-portfolios",
        }
    }

    pub fn url(self) -> &'static str {
        match self {
            Self::WindSpeed => "http://lib.stat.cmu.edu/datasets/wind.data",
            Self::IndustryPortfolios => {
                "https://mba.tuck.dartmouth.edu/pages/faculty/ken.french/ftp/49_Industry_Portfolios_daily_CSV.zip"
            }
        }
    }

    pub fn raw_file(self) -> &'static str {
        match self {
            Self::WindSpeed => "wind.data",
            Self::IndustryPortfolios => "49_Industry_Portfolios_daily_CSV.zip",
        }
    }

    pub fn csv_file(self) -> &'static str {
        match self {
            Self::WindSpeed => "wind.csv",
            Self::IndustryPortfolios => "industry_portfolios.csv",
        }
    }

    /// Content hash of the raw download, when known.
    pub fn pinned_sha256(self) -> Option<&'static str> {
        None
    }

    fn parse(self, raw: &[u8]) -> Result<Table> {
        match self {
            Self::WindSpeed => Ok(parse_wind_data(std::str::from_utf8(raw)?)?),
            Self::IndustryPortfolios => {
                let mut archive = zip::ZipArchive::new(std::io::Cursor::new(raw))?;
                let mut text = String::new();
                archive.by_index(0)?.read_to_string(&mut text)?;
                Ok(parse_portfolio_returns(
                    &text,
                    PORTFOLIO_FROM,
                    PORTFOLIO_TO,
                )?)
            }
        }
    }
}

pub struct FetchOptions {
    pub cache_dir: PathBuf,
    pub allow_network: bool,
    pub accept_unpinned: bool,
    pub expected_sha256: Option<String>,
}

pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("muscle")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn verify(expected: Option<&str>, bytes: &[u8], origin: &Path) -> Result<()> {
    if let Some(expected) = expected {
        let actual = sha256_hex(bytes);
        if !actual.eq_ignore_ascii_case(expected) {
            bail!(
                "checksum mismatch for {}: expected sha256 {expected}, actual {actual}",
                origin.display()
            );
        }
    }
    Ok(())
}

/// Returns the parsed CSV path, downloading the raw file only when it is not
/// cached and the network was explicitly allowed.
pub fn fetch(dataset: Dataset, opts: &FetchOptions) -> Result<PathBuf> {
    let expected = opts.expected_sha256.as_deref().or(dataset.pinned_sha256());
    let raw_path = opts.cache_dir.join(dataset.raw_file());
    let raw = if raw_path.exists() {
        let bytes =
            std::fs::read(&raw_path).with_context(|| format!("reading {}", raw_path.display()))?;
        verify(expected, &bytes, &raw_path)?;
        bytes
    } else {
        if !opts.allow_network {
            bail!(
                "{} is not cached in {}; pass --allow-network to download it",
                dataset.name(),
                opts.cache_dir.display()
            );
        }
        let bytes = download(dataset.url())?;
        verify(expected, &bytes, Path::new(dataset.url()))?;
        if expected.is_none() && !opts.accept_unpinned {
            bail!(
                "no pinned checksum for {}; downloaded sha256 is {}. Re-run with --sha256 {} or --accept-unpinned",
                dataset.name(),
                sha256_hex(&bytes),
                sha256_hex(&bytes)
            );
        }
        std::fs::create_dir_all(&opts.cache_dir)?;
        std::fs::write(&raw_path, &bytes)?;
        bytes
    };

    let csv_path = opts.cache_dir.join(dataset.csv_file());
    let table = dataset.parse(&raw)?;
    log::info!("{}: n = {}, d = {}", dataset.name(), table.n, table.d);
    let file = std::fs::File::create(&csv_path)?;
    write_table_csv(&table, std::io::BufWriter::new(file))?;
    Ok(csv_path)
}

fn download(url: &str) -> Result<Vec<u8>> {
    log::info!("downloading {url}");
    let mut response = ureq::get(url)
        .call()
        .map_err(|e| anyhow!("download of {url} failed: {e}"))?;
    let bytes = response
        .body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| anyhow!("reading {url} failed: {e}"))?;
    Ok(bytes)
}
