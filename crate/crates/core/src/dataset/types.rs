use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One annotated occurrence, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset: f64,
    pub offset: f64,
    pub class: String,
}

impl Event {
    pub fn new(onset: f64, offset: f64, class: impl Into<String>) -> Self {
        Self {
            onset,
            offset,
            class: class.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventList {
    pub events: Vec<Event>,
}

impl EventList {
    pub fn new(events: Vec<Event>) -> Self {
        Self { events }
    }

    /// Check `0 <= onset < offset <= duration` for every event.
    pub fn validate(&self, duration: f64) -> Result<()> {
        for e in &self.events {
            if !(e.onset >= 0.0 && e.onset < e.offset && e.offset <= duration + 1e-9) {
                return Err(Error::Dataset(format!(
                    "event ({}, {}, {}) outside [0, {duration}]",
                    e.onset, e.offset, e.class
                )));
            }
        }
        Ok(())
    }

    pub fn of_class<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| e.class == class)
    }

    pub fn filter_class(&self, class: &str) -> EventList {
        EventList::new(self.of_class(class).cloned().collect())
    }

    /// Distinct classes in order of first appearance.
    pub fn classes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.events {
            if !out.contains(&e.class) {
                out.push(e.class.clone());
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

impl FromIterator<Event> for EventList {
    fn from_iter<I: IntoIterator<Item = Event>>(iter: I) -> Self {
        EventList::new(iter.into_iter().collect())
    }
}

/// Binary per-frame activity of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub values: Vec<u8>,
    pub class: String,
}

impl FrameLabels {
    pub fn new(values: Vec<u8>, class: impl Into<String>) -> Result<Self> {
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("frame labels must be 0 or 1".into()));
        }
        Ok(Self {
            values,
            class: class.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn max(&self) -> u8 {
        self.values.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipLabel(pub u8);

impl ClipLabel {
    pub const POSITIVE: ClipLabel = ClipLabel(1);
    pub const NEGATIVE: ClipLabel = ClipLabel(0);

    pub fn value(self) -> u8 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// One-hot domain label: source `[1, 0]`, target `[0, 1]`.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Domain::Source => [1.0, 0.0],
            Domain::Target => [0.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}
