/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_noisypair_free: (a: number, b: number) => void;
export const __wbg_pyramidlevel_free: (a: number, b: number) => void;
export const __wbg_session_free: (a: number, b: number) => void;
export const add_noise: (a: number, b: number, c: number, d: number) => [number, number, number];
export const noisypair_clean: (a: number) => [number, number];
export const noisypair_noisy: (a: number) => [number, number];
export const noisypair_psnr: (a: number) => number;
export const noisypair_ssim: (a: number) => number;
export const pyramid_level: (a: number, b: number, c: number) => [number, number, number];
export const pyramidlevel_pooled: (a: number) => [number, number];
export const pyramidlevel_pooled_size: (a: number) => number;
export const pyramidlevel_psnr: (a: number) => number;
export const pyramidlevel_restored: (a: number) => [number, number];
export const session_denoised: (a: number) => [number, number, number, number];
export const session_epoch: (a: number) => number;
export const session_new: (a: number, b: number) => [number, number, number];
export const session_noisy: (a: number) => [number, number];
export const session_param_count: (a: number) => number;
export const session_patch_count: (a: number) => number;
export const session_scores: (a: number) => [number, number, number, number];
export const session_train_epoch: (a: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
