/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_disparity: (a: number) => number;
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_render: (a: number) => [number, number, number, number];
export const demo_set_asymmetry: (a: number, b: number) => void;
export const demo_set_half_gaussian: (a: number, b: number) => void;
export const demo_set_view: (a: number, b: number, c: number) => void;
export const demo_size: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
