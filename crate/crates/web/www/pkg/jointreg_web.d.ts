/* tslint:disable */
/* eslint-disable */

/**
 * A generated pair with its ground truth.
 */
export class DemoPair {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly angles_deg: Float64Array;
    readonly source: Float64Array;
    /**
     * The cropped target.
     */
    readonly target: Float64Array;
    readonly target_full: Float64Array;
    readonly translation: Float64Array;
}

/**
 * Outcome of one ICP run.
 */
export class IcpRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly aligned: Float64Array;
    readonly angles_deg: Float64Array;
    /**
     * Correspondence MSE before the first iteration and after each one.
     */
    readonly mse_log: Float64Array;
    readonly translation: Float64Array;
}

export function chamfer_curve(source: Float64Array, target: Float64Array, axis: number, max_deg: number, samples: number, sigma_t: number): Float64Array;

export function generate_pair(shape: number, points: number, keep_fraction: number, max_angle_deg: number, noise: boolean, seed: number): DemoPair;

export function run_icp(source: Float64Array, target: Float64Array, max_iterations: number): IcpRun;

export function shape_names(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demopair_free: (a: number, b: number) => void;
    readonly __wbg_icprun_free: (a: number, b: number) => void;
    readonly chamfer_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly demopair_angles_deg: (a: number) => [number, number];
    readonly demopair_source: (a: number) => [number, number];
    readonly demopair_target: (a: number) => [number, number];
    readonly demopair_target_full: (a: number) => [number, number];
    readonly demopair_translation: (a: number) => [number, number];
    readonly generate_pair: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly icprun_aligned: (a: number) => [number, number];
    readonly icprun_angles_deg: (a: number) => [number, number];
    readonly icprun_mse_log: (a: number) => [number, number];
    readonly icprun_translation: (a: number) => [number, number];
    readonly run_icp: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly shape_names: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
