from setuptools import Extension, setup

# Optional C accelerator for the channel-axis Walsh-Hadamard butterfly.
# The package falls back to the pure-numpy path if the module is absent.
setup(
    ext_modules=[
        Extension(
            "transformpc._fastwht",
            sources=["src/transformpc/_fastwht.c"],
            extra_compile_args=["-O3"],
        )
    ]
)
