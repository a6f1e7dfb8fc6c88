use crate::args::Format;

pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, headers: &[&str]) -> Self {
        Table {
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut s = format!("# {}\n{}\n", self.title, self.headers.join(","));
                for r in &self.rows {
                    s.push_str(&r.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
                    s.push('\n');
                }
                s
            }
            Format::Text => {
                let mut width: Vec<usize> = self.headers.iter().map(String::len).collect();
                for r in &self.rows {
                    for (w, c) in width.iter_mut().zip(r) {
                        *w = (*w).max(c.len());
                    }
                }
                let line = |cells: &[String]| {
                    let s: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
                    s.join("  ").trim_end().to_string() + "\n"
                };
                let mut s = format!("{}\n", self.title);
                s.push_str(&line(&self.headers));
                s.push_str(&line(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
                for r in &self.rows {
                    s.push_str(&line(r));
                }
                s
            }
        }
    }
}

fn csv_field(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

pub fn percent(x: f64) -> String {
    format!("{x:.1}")
}
