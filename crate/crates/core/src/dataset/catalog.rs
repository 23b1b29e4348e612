use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::scene::SceneRecipe;
use super::EventList;
use crate::error::{Error, Result};

/// A scene known to the catalog: either a recorded mixture or a synthesis
/// recipe, with its annotated events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub duration: f64,
    pub events: EventList,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<SceneRecipe>,
}

impl SceneEntry {
    pub fn classes(&self) -> BTreeSet<String> {
        self.events.classes().into_iter().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub classes: BTreeSet<String>,
    /// Single-event reference clips per class (paths or clip ids).
    pub clean_clips: BTreeMap<String, Vec<String>>,
    pub scenes: Vec<SceneEntry>,
}

impl Catalog {
    pub fn validate(&self) -> Result<()> {
        for scene in &self.scenes {
            for class in scene.classes() {
                if !self.clean_clips.get(&class).is_some_and(|c| !c.is_empty()) {
                    return Err(Error::Dataset(format!(
                        "scene {} uses class {class} without clean clips",
                        scene.id
                    )));
                }
                if !self.classes.contains(&class) {
                    return Err(Error::Dataset(format!(
                        "scene {} uses unknown class {class}",
                        scene.id
                    )));
                }
            }
        }
        Ok(())
    }

    fn restrict(&self, classes: &BTreeSet<String>) -> Catalog {
        Catalog {
            classes: classes.clone(),
            clean_clips: self
                .clean_clips
                .iter()
                .filter(|(c, _)| classes.contains(*c))
                .map(|(c, v)| (c.clone(), v.clone()))
                .collect(),
            scenes: self
                .scenes
                .iter()
                .filter(|s| {
                    let cs = s.classes();
                    !cs.is_empty() && cs.is_subset(classes)
                })
                .cloned()
                .collect(),
        }
    }
}

/// Partition a catalog into class-disjoint source and target catalogs.
/// Scenes mixing classes from both sides belong to neither.
pub fn split_source_target(
    catalog: &Catalog,
    source_classes: &BTreeSet<String>,
) -> Result<(Catalog, Catalog)> {
    let unknown: Vec<&String> = source_classes.difference(&catalog.classes).collect();
    if !unknown.is_empty() {
        return Err(Error::Dataset(format!(
            "unknown source classes: {unknown:?}"
        )));
    }
    let target: BTreeSet<String> = catalog
        .classes
        .difference(source_classes)
        .cloned()
        .collect();
    if source_classes.is_empty() || target.is_empty() {
        return Err(Error::Dataset(format!(
            "split leaves an empty side ({} source, {} target classes)",
            source_classes.len(),
            target.len()
        )));
    }
    Ok((catalog.restrict(source_classes), catalog.restrict(&target)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Event;

    fn catalog(n: usize) -> Catalog {
        let classes: BTreeSet<String> = (0..n).map(|i| format!("c{i:02}")).collect();
        let clean_clips = classes
            .iter()
            .map(|c| (c.clone(), vec![format!("{c}/0")]))
            .collect();
        let scenes = (0..n)
            .map(|i| SceneEntry {
                id: format!("s{i}"),
                duration: 4.0,
                events: EventList::new(vec![
                    Event::new(0.0, 1.0, format!("c{i:02}")),
                    Event::new(1.0, 2.0, format!("c{:02}", (i + 1) % n)),
                ]),
                mixture_path: None,
                recipe: None,
            })
            .collect();
        Catalog {
            classes,
            clean_clips,
            scenes,
        }
    }

    #[test]
    fn split_is_disjoint() {
        let cat = catalog(15);
        cat.validate().unwrap();
        let src: BTreeSet<String> = (0..5).map(|i| format!("c{i:02}")).collect();
        let (a, b) = split_source_target(&cat, &src).unwrap();
        assert_eq!(a.classes.len(), 5);
        assert_eq!(b.classes.len(), 10);
        assert!(a.classes.is_disjoint(&b.classes));
        // scenes c00+c01 .. c03+c04 are pure source, c05+c06 .. c13+c14 pure target
        assert_eq!(a.scenes.len(), 4);
        assert_eq!(b.scenes.len(), 9);
        for s in a.scenes.iter().chain(&b.scenes) {
            let cs = s.classes();
            assert!(cs.is_subset(&a.classes) || cs.is_subset(&b.classes));
        }
    }

    #[test]
    fn split_rejects_empty_sides_and_unknown_classes() {
        let cat = catalog(4);
        assert!(split_source_target(&cat, &cat.classes.clone()).is_err());
        assert!(split_source_target(&cat, &BTreeSet::new()).is_err());
        let bogus: BTreeSet<String> = ["nope".to_string()].into();
        assert!(split_source_target(&cat, &bogus).is_err());
    }

    #[test]
    fn validate_catches_missing_clips() {
        let mut cat = catalog(3);
        cat.clean_clips.remove("c01");
        assert!(cat.validate().is_err());
    }
}
