//! Keeps the guide's snippets compiling: each chapter is attached as module
//! docs, so `cargo test` runs its Rust blocks as doc-tests.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub mod $name {}
    };
}

chapter!(introduction, "introduction.md");
chapter!(audio, "audio.md");
chapter!(transforms, "transforms.md");
chapter!(codecs, "codecs.md");
chapter!(classifier, "classifier.md");
chapter!(attack, "attack.md");
chapter!(detection, "detection.md");
chapter!(learners, "learners.md");
chapter!(evaluation, "evaluation.md");
chapter!(cli, "cli.md");
