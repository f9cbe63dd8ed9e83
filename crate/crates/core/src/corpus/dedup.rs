//! Duplicate collapsing and meme removal over normalized text.

use std::collections::HashMap;
use std::collections::HashSet;

use super::RawPost;

/// Why a post was dropped by [`flag_duplicates_and_memes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Duplicate,
    Meme,
}

/// Flag exact-text duplicates and memes.
///
/// Posts are grouped by exact (already normalized) text. A text posted by at
/// least `meme_user_threshold` distinct users is treated as a meme and every
/// occurrence is dropped. Otherwise only the earliest occurrence by
/// `(timestamp, id)` is kept and later copies are dropped as duplicates.
///
/// Returns one `Ok(()) = keep` / `Err(reason) = drop` slot per input post, in
/// input order. The kept set does not depend on input order.
pub fn flag_duplicates_and_memes(
    posts: &[RawPost],
    meme_user_threshold: usize,
) -> Vec<Result<(), DropReason>> {
    struct Group<'a> {
        users: HashSet<&'a str>,
        earliest: (i64, &'a str),
    }

    let mut groups: HashMap<&str, Group> = HashMap::new();
    for post in posts {
        let key = (post.timestamp, post.id.as_str());
        groups
            .entry(post.text.as_str())
            .and_modify(|g| {
                g.users.insert(post.user_id.as_str());
                if key < g.earliest {
                    g.earliest = key;
                }
            })
            .or_insert_with(|| Group {
                users: HashSet::from([post.user_id.as_str()]),
                earliest: key,
            });
    }

    posts
        .iter()
        .map(|post| {
            let group = &groups[post.text.as_str()];
            if group.users.len() >= meme_user_threshold {
                Err(DropReason::Meme)
            } else if (post.timestamp, post.id.as_str()) == group.earliest {
                Ok(())
            } else {
                Err(DropReason::Duplicate)
            }
        })
        .collect()
}
