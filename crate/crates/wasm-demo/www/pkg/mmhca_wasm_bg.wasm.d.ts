/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_attentionview_free: (a: number, b: number) => void;
export const __wbg_degradation_free: (a: number, b: number) => void;
export const __wbg_phantom_free: (a: number, b: number) => void;
export const attentionview_hi: (a: number) => number;
export const attentionview_lo: (a: number) => number;
export const attentionview_rgba: (a: number) => [number, number];
export const degradation_lr_rgba: (a: number) => [number, number];
export const degradation_lr_size: (a: number) => number;
export const degradation_psnr: (a: number) => number;
export const degradation_ssim: (a: number) => number;
export const degradation_upscaled_rgba: (a: number) => [number, number];
export const phantom_attention: (a: number, b: number, c: number, d: number) => [number, number, number];
export const phantom_degrade: (a: number, b: number) => [number, number, number];
export const phantom_new: (a: number, b: number) => [number, number, number];
export const phantom_size: (a: number) => number;
export const phantom_slice_rgba: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
