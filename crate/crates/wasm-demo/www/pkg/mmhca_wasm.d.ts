/* tslint:disable */
/* eslint-disable */

export class AttentionView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    hi(): number;
    lo(): number;
    rgba(): Uint8Array;
}

export class Degradation {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    lr_rgba(): Uint8Array;
    lr_size(): number;
    psnr(): number;
    ssim(): number;
    upscaled_rgba(): Uint8Array;
}

export class Phantom {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Channel-mean attention over both slices, as a heat map stretched to its own range.
     */
    attention(heads: number, reduction: number, seed: number): AttentionView;
    /**
     * Bicubic round trip of the T2w slice.
     */
    degrade(scale: number): Degradation;
    constructor(seed: number, size: number);
    size(): number;
    /**
     * RGBA of modality 0 (T1w) or 1 (T2w).
     */
    slice_rgba(modality: number): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_attentionview_free: (a: number, b: number) => void;
    readonly __wbg_degradation_free: (a: number, b: number) => void;
    readonly __wbg_phantom_free: (a: number, b: number) => void;
    readonly attentionview_hi: (a: number) => number;
    readonly attentionview_lo: (a: number) => number;
    readonly attentionview_rgba: (a: number) => [number, number];
    readonly degradation_lr_rgba: (a: number) => [number, number];
    readonly degradation_lr_size: (a: number) => number;
    readonly degradation_psnr: (a: number) => number;
    readonly degradation_ssim: (a: number) => number;
    readonly degradation_upscaled_rgba: (a: number) => [number, number];
    readonly phantom_attention: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly phantom_degrade: (a: number, b: number) => [number, number, number];
    readonly phantom_new: (a: number, b: number) => [number, number, number];
    readonly phantom_size: (a: number) => number;
    readonly phantom_slice_rgba: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
