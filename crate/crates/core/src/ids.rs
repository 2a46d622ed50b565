use std::fmt;

use serde::{Deserialize, Serialize};

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

pub const DAY_SECONDS: i64 = 86_400;

/// UTC calendar day index of a timestamp.
pub fn day_of(ts: Timestamp) -> i64 {
    ts.div_euclid(DAY_SECONDS)
}

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u64> for $name {
            fn from(v: u64) -> Self {
                Self(v)
            }
        }
    };
}

opaque_id!(
    /// Anonymised user identifier.
    UserId
);
opaque_id!(TrackId);
opaque_id!(AlbumId);
opaque_id!(ArtistId);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_buckets_are_utc_and_floor_negative() {
        assert_eq!(day_of(0), 0);
        assert_eq!(day_of(DAY_SECONDS - 1), 0);
        assert_eq!(day_of(DAY_SECONDS), 1);
        assert_eq!(day_of(-1), -1);
    }
}
