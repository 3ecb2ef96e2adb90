/* tslint:disable */
/* eslint-disable */

/**
 * A clean fixture, its noisy copy and their PSNR/SSIM.
 */
export class NoisyPair {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    clean(): Uint8Array;
    noisy(): Uint8Array;
    readonly psnr: number;
    readonly ssim: number;
}

/**
 * One pyramid level: the pooled image, and the same image upsampled back.
 */
export class PyramidLevel {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    pooled(): Uint8Array;
    restored(): Uint8Array;
    readonly pooled_size: number;
    /**
     * Detail lost by the round trip, as PSNR against the input.
     */
    readonly psnr: number;
}

/**
 * A small grayscale model trained a batch at a time, so the page can
 * redraw between steps.
 */
export class Session {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Denoises the held-out image. Returns RGBA; scores via `scores`.
     */
    denoised(): Uint8Array;
    constructor(seed: number, sigma: number);
    noisy(): Uint8Array;
    /**
     * `[psnr_noisy, psnr_denoised, ssim_noisy, ssim_denoised]` on the held-out image.
     */
    scores(): Float64Array;
    /**
     * Runs one pass over the training patches and returns its mean L1 loss.
     */
    train_epoch(): number;
    /**
     * Completed passes over the training patches.
     */
    readonly epoch: number;
    readonly param_count: number;
    readonly patch_count: number;
}

/**
 * Synthesizes Gaussian noise of level `sigma` over fixture `seed`.
 */
export function add_noise(seed: number, size: number, sigma: number, channels: number): NoisyPair;

/**
 * Average-pools fixture `seed` by `kernel` and upsamples it bilinearly.
 */
export function pyramid_level(seed: number, size: number, kernel: number): PyramidLevel;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_noisypair_free: (a: number, b: number) => void;
    readonly __wbg_pyramidlevel_free: (a: number, b: number) => void;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly add_noise: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly noisypair_clean: (a: number) => [number, number];
    readonly noisypair_noisy: (a: number) => [number, number];
    readonly noisypair_psnr: (a: number) => number;
    readonly noisypair_ssim: (a: number) => number;
    readonly pyramid_level: (a: number, b: number, c: number) => [number, number, number];
    readonly pyramidlevel_pooled: (a: number) => [number, number];
    readonly pyramidlevel_pooled_size: (a: number) => number;
    readonly pyramidlevel_psnr: (a: number) => number;
    readonly pyramidlevel_restored: (a: number) => [number, number];
    readonly session_denoised: (a: number) => [number, number, number, number];
    readonly session_epoch: (a: number) => number;
    readonly session_new: (a: number, b: number) => [number, number, number];
    readonly session_noisy: (a: number) => [number, number];
    readonly session_param_count: (a: number) => number;
    readonly session_patch_count: (a: number) => number;
    readonly session_scores: (a: number) => [number, number, number, number];
    readonly session_train_epoch: (a: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
