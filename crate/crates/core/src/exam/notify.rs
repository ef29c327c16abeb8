use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::model::{Channel, Notification};

pub trait NotificationSink {
    fn deliver(&mut self, n: &Notification) -> io::Result<()>;
}

/// Keeps delivered notifications in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub delivered: Vec<Notification>,
}

impl NotificationSink for MemorySink {
    fn deliver(&mut self, n: &Notification) -> io::Result<()> {
        self.delivered.push(n.clone());
        Ok(())
    }
}

/// Appends to `sms.out` / `email.out` in a directory.
#[derive(Debug, Clone)]
pub struct FileSinks {
    dir: PathBuf,
}

impl FileSinks {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        FileSinks {
            dir: dir.as_ref().to_path_buf(),
        }
    }

    pub fn path(&self, channel: Channel) -> PathBuf {
        self.dir.join(match channel {
            Channel::Sms => "sms.out",
            Channel::Email => "email.out",
        })
    }
}

impl NotificationSink for FileSinks {
    fn deliver(&mut self, n: &Notification) -> io::Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(n.channel))?;
        writeln!(f, "{}", n.line())
    }
}
