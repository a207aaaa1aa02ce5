//! Dense embedding network, triplet loss and SGD training primitives.

mod io;
mod net;
mod triplet;

pub use io::{read_checkpoint, write_checkpoint, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC};
pub use net::{backward_apply, Activation, Dense, EmbeddingNet, ForwardTrace, Gradients, LayerGrads, Sgd};
pub use triplet::{
    batch_triplet_gradients, select_triplets, triplet_loss, GradientBundle, MiningStrategy, Triplet,
    TripletBatch, TripletLoss,
};
