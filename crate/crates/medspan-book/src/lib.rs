//! Runs the listings of the guide in `book/` as doctests.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    spans => "spans.md",
    normalization => "normalization.md",
    bio => "bio.md",
    weak_labels => "weak_labels.md",
    augmentation => "augmentation.md",
    tagger => "tagger.md",
    ensembles => "ensembles.md",
    evaluation => "evaluation.md",
    cli => "cli.md",
}
