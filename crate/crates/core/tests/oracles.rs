#![cfg(not(feature = "f32"))]

mod common;

use common::criteria;

#[test]
fn conv2d_matches_oracle() {
    criteria::oracle_conv2d();
}

#[test]
fn fully_connected_matches_oracle() {
    criteria::oracle_fully_connected();
}

#[test]
fn global_avg_pool_matches_oracle() {
    criteria::oracle_global_avg_pool();
}

#[test]
fn avg_pool_matches_oracle() {
    criteria::oracle_avg_pool();
}

#[test]
fn bilinear_upsample_matches_oracle() {
    criteria::oracle_bilinear_upsample();
}

#[test]
fn softmax_matches_oracle() {
    criteria::oracle_softmax();
}

#[test]
fn channel_attention_matches_oracle() {
    criteria::oracle_channel_attention();
}

#[test]
fn kernel_select_matches_oracle() {
    criteria::oracle_kernel_select();
}

#[test]
fn unet_matches_oracle() {
    criteria::oracle_unet();
}

#[test]
fn pyramid_matches_oracle() {
    criteria::oracle_pyramid();
}

#[test]
fn full_forward_matches_oracle() {
    criteria::oracle_full_forward();
}
