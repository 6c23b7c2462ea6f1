/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demopair_free: (a: number, b: number) => void;
export const __wbg_icprun_free: (a: number, b: number) => void;
export const chamfer_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const demopair_angles_deg: (a: number) => [number, number];
export const demopair_source: (a: number) => [number, number];
export const demopair_target: (a: number) => [number, number];
export const demopair_target_full: (a: number) => [number, number];
export const demopair_translation: (a: number) => [number, number];
export const generate_pair: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const icprun_aligned: (a: number) => [number, number];
export const icprun_angles_deg: (a: number) => [number, number];
export const icprun_mse_log: (a: number) => [number, number];
export const icprun_translation: (a: number) => [number, number];
export const run_icp: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const shape_names: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
