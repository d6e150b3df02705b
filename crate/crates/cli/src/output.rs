use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// `# key = value` lines that open every text output, so a file on its own
/// says which tool, settings and seed produced it.
#[derive(Clone, Debug)]
pub struct Header {
    command: &'static str,
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(command: &'static str) -> Self {
        Header {
            command,
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        // keep every entry on one line
        let v = value.to_string().replace(['\n', '\r'], " ");
        self.entries.push((key.to_owned(), v));
    }

    pub fn render(&self) -> String {
        let mut s = format!("# carbonpp {} {}\n", carbonpp::VERSION, self.command);
        for (k, v) in &self.entries {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("tool".into(), "carbonpp".into());
        map.insert("tool_version".into(), carbonpp::VERSION.into());
        map.insert("command".into(), self.command.into());
        for (k, v) in &self.entries {
            map.insert(k.clone(), v.clone().into());
        }
        serde_json::Value::Object(map)
    }
}

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: Option<&Path>) -> Result<Self> {
        let root = root.map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        fs::create_dir_all(&root).map_err(|e| CliError::Write {
            path: root.clone(),
            source: e,
        })?;
        Ok(OutDir {
            root,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        write_path(&path, contents)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

pub fn write_path(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Write {
            path: parent.into(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| CliError::Write {
        path: path.into(),
        source: e,
    })
}

/// A file-name-safe version of a determination id.
pub fn safe_name(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}
