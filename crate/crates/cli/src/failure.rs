use std::fmt;

/// A one-line, categorized error: `error[category]: message`.
#[derive(Debug)]
pub struct Failure {
    pub category: &'static str,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(category: &'static str, error: impl Into<anyhow::Error>) -> Self {
        Self {
            category,
            error: error.into(),
        }
    }

    pub fn msg(category: &'static str, message: impl fmt::Display) -> Self {
        Self::new(category, anyhow::anyhow!("{message}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = format!("{:#}", self.error).replace('\n', " ");
        write!(f, "error[{}]: {text}", self.category)
    }
}

pub trait Categorize<T> {
    fn cat(self, category: &'static str) -> Result<T, Failure>;
    fn cat_with(self, category: &'static str, context: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Categorize<T> for Result<T, E> {
    fn cat(self, category: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(category, e))
    }

    fn cat_with(self, category: &'static str, context: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(category, e.into().context(context())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_on_one_line_with_context() {
        let r: Result<(), std::io::Error> = Err(std::io::Error::other("disk\nfull"));
        let f = r.cat_with("io", || "writing out.bin".into()).unwrap_err();
        assert_eq!(f.to_string(), "error[io]: writing out.bin: disk full");
    }
}
