/* tslint:disable */
/* eslint-disable */

/**
 * Rings trainer in UDA mode; weights can change between steps.
 */
export class RingsDemo {
    free(): void;
    [Symbol.dispose](): void;
    iteration(): number;
    constructor(lambda: number, beta: number, seed: number);
    pairs(n: number, seed: number): Float64Array;
    path(steps: number, seed: number): Float64Array;
    /**
     * Real samples of both domains as `[x, y, domain, class]` rows.
     */
    real(n: number): Float64Array;
    set_weights(lambda: number, beta: number): void;
    target_accuracy(): number;
    train(steps: number): Float64Array;
}

export function glyph_pair(family: number, transform: string, res: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_ringsdemo_free: (a: number, b: number) => void;
    readonly glyph_pair: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly ringsdemo_iteration: (a: number) => number;
    readonly ringsdemo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly ringsdemo_pairs: (a: number, b: number, c: number) => [number, number, number, number];
    readonly ringsdemo_path: (a: number, b: number, c: number) => [number, number, number, number];
    readonly ringsdemo_real: (a: number, b: number) => [number, number];
    readonly ringsdemo_set_weights: (a: number, b: number, c: number) => [number, number];
    readonly ringsdemo_target_accuracy: (a: number) => [number, number, number];
    readonly ringsdemo_train: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
