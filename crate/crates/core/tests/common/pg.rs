//! A throwaway PostgreSQL cluster for tests.

#![allow(dead_code)]

use std::net::TcpListener;
use std::os::unix::fs::MetadataExt;
use std::path::{Path, PathBuf};
use std::process::Command;

/// Directory holding `initdb`, `pg_ctl` and `postgres`; `EHRSYNTH_PG_BIN`
/// overrides the default location.
pub fn pg_bin() -> Option<PathBuf> {
    let dir = std::env::var_os("EHRSYNTH_PG_BIN")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/opt/pgsql/bin"));
    dir.join("initdb").exists().then_some(dir)
}

/// A private cluster on a free local port, stopped and deleted on drop.
/// PostgreSQL refuses to run as root, so under root the server runs as
/// `nobody`.
pub struct TempPg {
    bin: PathBuf,
    data: PathBuf,
    _root: tempfile::TempDir,
    pub port: u16,
}

fn running_as_root() -> bool {
    std::fs::metadata("/proc/self").map(|m| m.uid() == 0).unwrap_or(false)
}

fn command(bin: &Path, tool: &str) -> Command {
    let mut c = if running_as_root() {
        let mut c = Command::new("setpriv");
        c.args(["--reuid=nobody", "--regid=nogroup", "--clear-groups"]).arg(bin.join(tool));
        c
    } else {
        Command::new(bin.join(tool))
    };
    // relocated builds keep their shared libraries next to the binaries
    let lib = bin.join("../lib");
    if lib.is_dir() {
        let mut path = std::ffi::OsString::from(lib);
        if let Some(old) = std::env::var_os("LD_LIBRARY_PATH") {
            path.push(":");
            path.push(old);
        }
        c.env("LD_LIBRARY_PATH", path);
    }
    c
}

fn nobody_owned(path: &Path) {
    std::fs::create_dir_all(path).unwrap();
    if running_as_root() {
        std::os::unix::fs::chown(path, Some(65534), Some(65534)).unwrap();
    }
}

impl TempPg {
    pub fn start() -> Option<TempPg> {
        let bin = pg_bin()?;
        let root = tempfile::Builder::new().prefix("ehrsynth-pg").tempdir().unwrap();
        std::fs::set_permissions(root.path(), std::os::unix::fs::PermissionsExt::from_mode(0o755)).unwrap();
        let data = root.path().join("data");
        let sock = root.path().join("sock");
        nobody_owned(&data);
        nobody_owned(&sock);
        let out = command(&bin, "initdb")
            .args(["-A", "trust", "-U", "postgres", "-E", "UTF8", "--no-sync", "-D"])
            .arg(&data)
            .output()
            .unwrap();
        assert!(out.status.success(), "initdb failed: {}", String::from_utf8_lossy(&out.stderr));
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let opts = format!(
            "-p {port} -k {} -c listen_addresses=127.0.0.1 -c fsync=off -c full_page_writes=off",
            sock.display()
        );
        let out = command(&bin, "pg_ctl")
            .arg("-D")
            .arg(&data)
            .arg("-l")
            .arg(data.join("server.log"))
            .args(["-w", "-o", &opts, "start"])
            .output()
            .unwrap();
        assert!(out.status.success(), "pg_ctl start failed: {}", String::from_utf8_lossy(&out.stderr));
        Some(TempPg {
            bin,
            data,
            _root: root,
            port,
        })
    }

    pub fn url(&self, db: &str) -> String {
        format!("postgres://postgres@127.0.0.1:{}/{db}", self.port)
    }

    pub fn client(&self, db: &str) -> postgres::Client {
        postgres::Client::connect(&self.url(db), postgres::NoTls).expect("connect to test cluster")
    }

    /// A fresh empty database.
    pub fn create_db(&self, name: &str) -> postgres::Client {
        self.client("postgres").batch_execute(&format!("CREATE DATABASE {name}")).unwrap();
        self.client(name)
    }
}

impl Drop for TempPg {
    fn drop(&mut self) {
        let _ = command(&self.bin, "pg_ctl")
            .arg("-D")
            .arg(&self.data)
            .args(["-m", "immediate", "-w", "stop"])
            .output();
    }
}

