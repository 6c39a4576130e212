from setuptools import setup

setup(
    name='priorview',
    package_dir={'': 'src'},
    py_modules=[
        'ablation',
        'checkpoint',
        'cli',
        'common_operations',
        'data',
        'evaluation',
        'fusion',
        'layers',
        'metrics',
        'model',
        'optim',
        'pipeline',
        'synthetic',
        'tensor',
        'tokenizer',
        'transformer',
        'utils',
        'vision',
    ],
    version='0.1.0',
    description='Dual-image vision-language model for longitudinal chest X-ray difference VQA.',
    license='MIT',
    python_requires='>=3.9',
    install_requires=['matplotlib', 'nltk', 'numpy', 'openpyxl', 'pandas', 'Pillow'],
    entry_points={'console_scripts': ['priorview=cli:main']},
)
