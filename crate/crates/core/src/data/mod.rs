pub mod flowfield;
pub mod frame;
pub mod manifest;

pub use flowfield::FlowField;
pub use frame::{resize_for_synthesis, Frame};
pub use manifest::{
    Action, AlignedPair, ExoKind, FrameRecord, Manifest, Modality, PairedSequence, Pose, SequenceEntry, Split,
    SplitCounts, Tally, View,
};
