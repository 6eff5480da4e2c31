/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_ringsdemo_free: (a: number, b: number) => void;
export const glyph_pair: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const ringsdemo_iteration: (a: number) => number;
export const ringsdemo_new: (a: number, b: number, c: number) => [number, number, number];
export const ringsdemo_pairs: (a: number, b: number, c: number) => [number, number, number, number];
export const ringsdemo_path: (a: number, b: number, c: number) => [number, number, number, number];
export const ringsdemo_real: (a: number, b: number) => [number, number];
export const ringsdemo_set_weights: (a: number, b: number, c: number) => [number, number];
export const ringsdemo_target_accuracy: (a: number) => [number, number, number];
export const ringsdemo_train: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
