mod common;

use common::{find_case, run_case, TOLERANCE};

macro_rules! gradcheck {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                let c = find_case(stringify!($name));
                let worst = run_case(&c);
                assert!(worst <= TOLERANCE, "{}: max relative error {worst:e}", c.name);
            }
        )*
    };
}

gradcheck!(
    conv1d_valid, conv1d_same, conv1d_full, conv1d_strided,
    max_pool, avg_pool, global_avg_pool,
    dense, dense_softmax,
    relu, leaky_relu, sigmoid, tanh, softmax,
    batchnorm_train, batchnorm_eval, dropout_frozen_mask,
    lstm_sequences, lstm_last, gru_sequences, gru_last, bilstm, bigru,
    se_block, rta_block_projected, rta_block_identity, spatiotemporal_attention, tanh_attention,
    flatten, reshape, add, multiply, concat, upsample, fit_time_crop, fit_time_pad,
    repeat_time, repeat_channels, channel_mean, reverse_time,
);

#[test]
fn every_case_is_covered_by_a_test() {
    assert_eq!(common::layer_cases().len(), 40);
}
