/* tslint:disable */
/* eslint-disable */

/**
 * Scene state held on the Rust side between frames.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Mean absolute opacity difference of the live scene.
     */
    disparity(): number;
    /**
     * Random scene of wide splats with independent opacity pairs.
     */
    constructor(seed: number, size: number);
    /**
     * RGBA bytes, row-major, ready for `ImageData`.
     */
    render(): Uint8Array;
    /**
     * 0 gives both halves the mean opacity, 1 restores the generated pairs.
     */
    set_asymmetry(t: number): void;
    /**
     * `true` for paired half-Gaussians, `false` for the plain Gaussian
     * kernel with the mean opacity.
     */
    set_half_gaussian(on: boolean): void;
    /**
     * Camera angles in degrees.
     */
    set_view(yaw: number, pitch: number): void;
    size(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_disparity: (a: number) => number;
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_render: (a: number) => [number, number, number, number];
    readonly demo_set_asymmetry: (a: number, b: number) => void;
    readonly demo_set_half_gaussian: (a: number, b: number) => void;
    readonly demo_set_view: (a: number, b: number, c: number) => void;
    readonly demo_size: (a: number) => number;
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
