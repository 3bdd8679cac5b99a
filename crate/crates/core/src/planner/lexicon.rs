//! Controlled vocabulary shared by the grammar planner, the procedural
//! generator and the stub reviewer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! word_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self { $($name::$variant => $word),+ }
            }
        }

        impl FromStr for $name {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $($word => Ok($name::$variant),)+ _ => Err(()) }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

word_enum! {
    /// Twelve 30-degree hue bands, centred on multiples of 30 degrees.
    HueTag {
        Red => "red", Orange => "orange", Yellow => "yellow", Lime => "lime",
        Green => "green", Teal => "teal", Cyan => "cyan", Azure => "azure",
        Blue => "blue", Violet => "violet", Purple => "purple", Pink => "pink",
    }
}

impl HueTag {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> HueTag {
        HueTag::ALL[i % 12]
    }

    pub fn center_degrees(self) -> f64 {
        30.0 * self.index() as f64
    }

    /// The band containing `hue` (degrees, any range).
    pub fn of_hue(hue: f64) -> HueTag {
        let h = hue.rem_euclid(360.0);
        HueTag::from_index((((h + 15.0) / 30.0).floor() as usize) % 12)
    }

    pub fn contains(self, hue: f64) -> bool {
        HueTag::of_hue(hue) == self
    }
}

word_enum! {
    SizeTag { Small => "small", Medium => "medium", Large => "large" }
}

impl SizeTag {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Linear extent of a glyph relative to its canvas or layout cell.
    pub fn scale(self) -> f64 {
        match self {
            SizeTag::Small => 0.7,
            SizeTag::Medium => 0.85,
            SizeTag::Large => 1.0,
        }
    }
}

word_enum! {
    Pose {
        Flying => "flying", Standing => "standing", Sitting => "sitting",
        Sleeping => "sleeping", Swimming => "swimming", Floating => "floating",
    }
}

word_enum! {
    Style {
        Medieval => "medieval", Modern => "modern", Ancient => "ancient",
        Wooden => "wooden", Stone => "stone", Gothic => "gothic",
    }
}

word_enum! {
    /// Background phrases ("at sunset" ...). `Neutral` is the default when
    /// the prompt names none.
    Lighting { Sunset => "sunset", Night => "night", Noon => "noon", Neutral => "neutral" }
}

word_enum! {
    RelationKind {
        Above => "above", Below => "below", LeftOf => "left-of", RightOf => "right-of", Over => "over",
    }
}

word_enum! {
    /// Cells of the 3x3 layout grid.
    GridCell {
        UpperLeft => "upper-left", UpperCenter => "upper-center", UpperRight => "upper-right",
        MiddleLeft => "middle-left", Center => "center", MiddleRight => "middle-right",
        LowerLeft => "lower-left", LowerCenter => "lower-center", LowerRight => "lower-right",
    }
}

impl GridCell {
    pub fn row(self) -> usize {
        self as usize / 3
    }

    pub fn col(self) -> usize {
        self as usize % 3
    }

    pub fn at(row: usize, col: usize) -> GridCell {
        GridCell::ALL[row.min(2) * 3 + col.min(2)]
    }
}

/// Entities the procedural generator can draw.
pub const ENTITIES: &[&str] = &[
    "dragon", "castle", "tree", "house", "bird", "moon", "sun", "mountain", "boat", "star",
    "circle", "square",
];

/// Entity name of background subtasks.
pub const BACKGROUND_ENTITY: &str = "sky";

pub fn is_entity(word: &str) -> bool {
    ENTITIES.contains(&word)
}

pub fn entity_index(word: &str) -> Option<usize> {
    ENTITIES.iter().position(|e| *e == word)
}

pub(crate) const ARTICLES: &[&str] = &["a", "an", "the"];
